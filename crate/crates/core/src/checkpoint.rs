//! Binary checkpoints for RBM and DBM training state.
//!
//! A file is a 6-byte magic (`SGRBM1` or `SGDBM1`) followed by sections. Each
//! section is a 4-byte ASCII tag, a little-endian `u64` payload length and the
//! payload. Integers are `u64` and reals `f64`, both little-endian; matrices
//! are stored row-major after their row and column counts. Nothing time- or
//! host-dependent is written, so equal states give equal bytes.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dbm::{DbmMomentum, DbmParams, DbmTrainConfig, DbmTrainer, FantasyParticles};
use crate::error::{Error, Result};
use crate::optim::{MomentumState, TrainConfig};
use crate::rbm::{RbmParams, VisibleType};
use crate::regularizer::{BaselineTarget, Grouping, RegularizerConfig, RegularizerKind};
use crate::train::RbmTrainer;

pub const RBM_MAGIC: &[u8; 6] = b"SGRBM1";
pub const DBM_MAGIC: &[u8; 6] = b"SGDBM1";

#[derive(Clone, Debug)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Saved state of a single RBM and its trainer.
#[derive(Clone, Debug)]
pub struct RbmCheckpoint {
    pub params: RbmParams,
    pub momentum: MomentumState,
    pub grouping: Grouping,
    pub regularizer: RegularizerConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub rng: RngState,
    pub image_shape: Option<(usize, usize)>,
}

#[derive(Clone, Debug)]
pub struct DbmCheckpoint {
    pub params: DbmParams,
    pub momentum: DbmMomentum,
    pub particles: FantasyParticles,
    pub grouping1: Grouping,
    pub grouping2: Grouping,
    pub lambdas: (f64, f64),
    pub epoch: usize,
    pub seed: u64,
    pub rng: RngState,
    pub image_shape: Option<(usize, usize)>,
}

/// Either kind of checkpoint, as found on disk.
#[derive(Clone, Debug)]
pub enum Checkpoint {
    Rbm(RbmCheckpoint),
    Dbm(DbmCheckpoint),
}

impl Checkpoint {
    pub fn image_shape(&self) -> Option<(usize, usize)> {
        match self {
            Checkpoint::Rbm(c) => c.image_shape,
            Checkpoint::Dbm(c) => c.image_shape,
        }
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(magic: &[u8; 6]) -> Self {
        Writer {
            buf: magic.to_vec(),
        }
    }

    fn section(&mut self, tag: &[u8; 4], payload: Payload) {
        self.buf.extend_from_slice(tag);
        self.buf
            .extend_from_slice(&(payload.0.len() as u64).to_le_bytes());
        self.buf.extend_from_slice(&payload.0);
    }
}

#[derive(Default)]
struct Payload(Vec<u8>);

impl Payload {
    fn u64(mut self, v: u64) -> Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }

    fn f64(mut self, v: f64) -> Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }

    fn bytes(mut self, b: &[u8]) -> Self {
        self.0.extend_from_slice(b);
        self
    }

    fn vector(mut self, v: &Array1<f64>) -> Self {
        self = self.u64(v.len() as u64);
        for &x in v.iter() {
            self = self.f64(x);
        }
        self
    }

    fn matrix(mut self, m: &Array2<f64>) -> Self {
        self = self.u64(m.nrows() as u64).u64(m.ncols() as u64);
        for &x in m.iter() {
            self = self.f64(x);
        }
        self
    }

    fn indices(mut self, v: &[usize]) -> Self {
        self = self.u64(v.len() as u64);
        for &x in v {
            self = self.u64(x as u64);
        }
        self
    }
}

/// Cursor over one section's payload; offsets in errors are file offsets.
struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::parse(
                self.base + self.pos,
                "checkpoint section truncated",
            ));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        let offset = self.base + self.pos;
        usize::try_from(self.u64()?)
            .map_err(|_| Error::parse(offset, "count does not fit in memory"))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn count(&mut self, elem: usize) -> Result<usize> {
        let offset = self.base + self.pos;
        let n = self.usize()?;
        if n.checked_mul(elem)
            .is_none_or(|b| b > self.data.len() - self.pos)
        {
            return Err(Error::parse(
                offset,
                format!("count {n} exceeds section length"),
            ));
        }
        Ok(n)
    }

    fn vector(&mut self) -> Result<Array1<f64>> {
        let n = self.count(8)?;
        (0..n)
            .map(|_| self.f64())
            .collect::<Result<Vec<_>>>()
            .map(Array1::from)
    }

    fn matrix(&mut self) -> Result<Array2<f64>> {
        let offset = self.base + self.pos;
        let rows = self.usize()?;
        let cols = self.usize()?;
        let len = rows
            .checked_mul(cols)
            .filter(|n| {
                n.checked_mul(8)
                    .is_some_and(|b| b <= self.data.len() - self.pos)
            })
            .ok_or_else(|| {
                Error::parse(
                    offset,
                    format!("matrix {rows}x{cols} exceeds section length"),
                )
            })?;
        let values = (0..len).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(Array2::from_shape_vec((rows, cols), values).expect("length checked"))
    }

    fn indices(&mut self) -> Result<Vec<usize>> {
        let n = self.count(8)?;
        (0..n).map(|_| self.usize()).collect()
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::parse(
                self.base + self.pos,
                "trailing bytes in checkpoint section",
            ));
        }
        Ok(())
    }
}

struct Sections<'a> {
    items: Vec<([u8; 4], usize, &'a [u8])>,
}

impl<'a> Sections<'a> {
    fn parse(bytes: &'a [u8], magic: &[u8; 6]) -> Result<Self> {
        if bytes.len() < 6 || &bytes[..6] != magic {
            return Err(Error::parse(
                0,
                format!("expected magic {}", String::from_utf8_lossy(magic)),
            ));
        }
        let mut items = Vec::new();
        let mut pos = 6;
        while pos < bytes.len() {
            if bytes.len() - pos < 12 {
                return Err(Error::parse(pos, "truncated section header"));
            }
            let tag: [u8; 4] = bytes[pos..pos + 4].try_into().unwrap();
            let len = u64::from_le_bytes(bytes[pos + 4..pos + 12].try_into().unwrap());
            let start = pos + 12;
            let len = usize::try_from(len)
                .ok()
                .filter(|&l| l <= bytes.len() - start)
                .ok_or_else(|| Error::parse(pos + 4, "section length exceeds file size"))?;
            items.push((tag, start, &bytes[start..start + len]));
            pos = start + len;
        }
        Ok(Sections { items })
    }

    fn find(&self, tag: &[u8; 4]) -> Option<Reader<'a>> {
        self.items
            .iter()
            .find(|(t, _, _)| t == tag)
            .map(|&(_, base, data)| Reader { data, pos: 0, base })
    }

    fn get(&self, tag: &[u8; 4]) -> Result<Reader<'a>> {
        self.find(tag).ok_or_else(|| {
            Error::parse(
                0,
                format!(
                    "missing checkpoint section {}",
                    String::from_utf8_lossy(tag)
                ),
            )
        })
    }

    fn read<T>(&self, tag: &[u8; 4], f: impl FnOnce(&mut Reader<'a>) -> Result<T>) -> Result<T> {
        let mut r = self.get(tag)?;
        let v = f(&mut r)?;
        r.finish()?;
        Ok(v)
    }
}

fn rng_payload(rng: &RngState) -> Payload {
    Payload::default()
        .bytes(&rng.seed)
        .u64(rng.stream)
        .bytes(&rng.word_pos.to_le_bytes())
}

fn read_rng(r: &mut Reader) -> Result<RngState> {
    let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
    let stream = r.u64()?;
    let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
    Ok(RngState {
        seed,
        stream,
        word_pos,
    })
}

fn image_payload(shape: Option<(usize, usize)>) -> Option<Payload> {
    shape.map(|(rows, cols)| Payload::default().u64(rows as u64).u64(cols as u64))
}

fn read_image(sections: &Sections) -> Result<Option<(usize, usize)>> {
    match sections.find(b"IMGS") {
        None => Ok(None),
        Some(mut r) => {
            let shape = (r.usize()?, r.usize()?);
            r.finish()?;
            Ok(Some(shape))
        }
    }
}

fn read_grouping(r: &mut Reader) -> Result<Grouping> {
    let offset = r.base + r.pos;
    Grouping::from_assignment(r.indices()?).map_err(|e| Error::parse(offset, e.to_string()))
}

fn shape_error(what: &str) -> Error {
    Error::parse(0, format!("checkpoint {what} has inconsistent dimensions"))
}

fn kind_code(kind: RegularizerKind) -> u64 {
    match kind {
        RegularizerKind::None => 0,
        RegularizerKind::SparseGroup => 1,
        RegularizerKind::SparseRbmBaseline => 2,
    }
}

impl RbmCheckpoint {
    pub fn from_trainer(t: &RbmTrainer, image_shape: Option<(usize, usize)>) -> Self {
        RbmCheckpoint {
            params: t.params.clone(),
            momentum: t.optimizer.clone(),
            grouping: t.grouping.clone(),
            regularizer: t.config.regularizer.clone(),
            epoch: t.epoch,
            seed: t.seed,
            rng: RngState::capture(&t.rng),
            image_shape,
        }
    }

    /// Resumes training; the saved regularizer settings override `config`'s.
    pub fn into_trainer(self, mut config: TrainConfig) -> RbmTrainer {
        config.regularizer = self.regularizer;
        RbmTrainer {
            params: self.params,
            optimizer: self.momentum,
            grouping: self.grouping,
            config,
            epoch: self.epoch,
            seed: self.seed,
            rng: self.rng.restore(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let vt = match p.visible_type {
            VisibleType::Binary => 0,
            VisibleType::Gaussian => 1,
        };
        let mut w = Writer::new(RBM_MAGIC);
        w.section(
            b"DIMS",
            Payload::default()
                .u64(vt)
                .u64(p.num_visible() as u64)
                .u64(p.num_hidden() as u64),
        );
        if let Some(img) = image_payload(self.image_shape) {
            w.section(b"IMGS", img);
        }
        w.section(
            b"EPCH",
            Payload::default().u64(self.epoch as u64).u64(self.seed),
        );
        w.section(b"WGHT", Payload::default().matrix(&p.weights));
        w.section(b"VBIA", Payload::default().vector(&p.visible_bias));
        w.section(b"HBIA", Payload::default().vector(&p.hidden_bias));
        w.section(
            b"OPTS",
            Payload::default()
                .matrix(&self.momentum.weights)
                .vector(&self.momentum.visible_bias)
                .vector(&self.momentum.hidden_bias),
        );
        w.section(b"RNGS", rng_payload(&self.rng));
        w.section(
            b"GRUP",
            Payload::default().indices(self.grouping.assignment()),
        );
        let reg = &self.regularizer;
        let (target_kind, target_value) = match reg.baseline_target {
            BaselineTarget::Probability(p) => (0, p),
            BaselineTarget::UnitCount(n) => (1, n),
        };
        w.section(
            b"REGC",
            Payload::default()
                .u64(kind_code(reg.kind))
                .f64(reg.lambda)
                .u64(reg.group_size as u64)
                .f64(reg.epsilon)
                .u64(target_kind)
                .f64(target_value)
                .f64(reg.baseline_weight),
        );
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let s = Sections::parse(bytes, RBM_MAGIC)?;
        let (vt, v, h) = s.read(b"DIMS", |r| Ok((r.u64()?, r.usize()?, r.usize()?)))?;
        let visible_type = match vt {
            0 => VisibleType::Binary,
            1 => VisibleType::Gaussian,
            other => {
                return Err(Error::parse(
                    s.get(b"DIMS")?.base,
                    format!("unknown visible type {other}"),
                ))
            }
        };
        let (epoch, seed) = s.read(b"EPCH", |r| Ok((r.usize()?, r.u64()?)))?;
        let weights = s.read(b"WGHT", |r| r.matrix())?;
        let visible_bias = s.read(b"VBIA", |r| r.vector())?;
        let hidden_bias = s.read(b"HBIA", |r| r.vector())?;
        if weights.dim() != (v, h) {
            return Err(shape_error("weights"));
        }
        let params = RbmParams::new(weights, visible_bias, hidden_bias, visible_type)
            .map_err(|_| shape_error("biases"))?;
        let momentum = s.read(b"OPTS", |r| {
            Ok(MomentumState {
                weights: r.matrix()?,
                visible_bias: r.vector()?,
                hidden_bias: r.vector()?,
            })
        })?;
        if momentum.weights.dim() != (v, h)
            || momentum.visible_bias.len() != v
            || momentum.hidden_bias.len() != h
        {
            return Err(shape_error("optimizer state"));
        }
        let rng = s.read(b"RNGS", read_rng)?;
        let grouping = s.read(b"GRUP", read_grouping)?;
        if grouping.num_hidden() != h {
            return Err(shape_error("grouping"));
        }
        let regularizer = s.read(b"REGC", |r| {
            let kind = match r.u64()? {
                0 => RegularizerKind::None,
                1 => RegularizerKind::SparseGroup,
                2 => RegularizerKind::SparseRbmBaseline,
                other => {
                    return Err(Error::parse(
                        r.base,
                        format!("unknown regularizer kind {other}"),
                    ))
                }
            };
            let lambda = r.f64()?;
            let group_size = r.usize()?;
            let epsilon = r.f64()?;
            let target_kind = r.u64()?;
            let target_value = r.f64()?;
            let baseline_target = if target_kind == 0 {
                BaselineTarget::Probability(target_value)
            } else {
                BaselineTarget::UnitCount(target_value)
            };
            Ok(RegularizerConfig {
                kind,
                lambda,
                group_size,
                epsilon,
                baseline_target,
                baseline_weight: r.f64()?,
            })
        })?;
        Ok(RbmCheckpoint {
            params,
            momentum,
            grouping,
            regularizer,
            epoch,
            seed,
            rng,
            image_shape: read_image(&s)?,
        })
    }
}

impl DbmCheckpoint {
    pub fn from_trainer(t: &DbmTrainer, image_shape: Option<(usize, usize)>) -> Self {
        DbmCheckpoint {
            params: t.params.clone(),
            momentum: t.momentum.clone(),
            particles: t.particles.clone(),
            grouping1: t.grouping1.clone(),
            grouping2: t.grouping2.clone(),
            lambdas: (t.config.lambda1, t.config.lambda2),
            epoch: t.epoch,
            seed: t.seed,
            rng: RngState::capture(&t.rng),
            image_shape,
        }
    }

    pub fn into_trainer(self, mut config: DbmTrainConfig) -> DbmTrainer {
        (config.lambda1, config.lambda2) = self.lambdas;
        DbmTrainer {
            params: self.params,
            momentum: self.momentum,
            particles: self.particles,
            grouping1: self.grouping1,
            grouping2: self.grouping2,
            config,
            epoch: self.epoch,
            seed: self.seed,
            rng: self.rng.restore(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let (v, h1, h2) = p.dims();
        let mut w = Writer::new(DBM_MAGIC);
        w.section(
            b"DIMS",
            Payload::default()
                .u64(2)
                .u64(v as u64)
                .u64(h1 as u64)
                .u64(h2 as u64),
        );
        if let Some(img) = image_payload(self.image_shape) {
            w.section(b"IMGS", img);
        }
        w.section(
            b"EPCH",
            Payload::default().u64(self.epoch as u64).u64(self.seed),
        );
        w.section(b"W001", Payload::default().matrix(&p.w1));
        w.section(b"W002", Payload::default().matrix(&p.w2));
        w.section(b"B000", Payload::default().vector(&p.visible_bias));
        w.section(b"B001", Payload::default().vector(&p.hidden1_bias));
        w.section(b"B002", Payload::default().vector(&p.hidden2_bias));
        let m = &self.momentum;
        w.section(
            b"OPTS",
            Payload::default()
                .matrix(&m.w1)
                .matrix(&m.w2)
                .vector(&m.visible_bias)
                .vector(&m.hidden1_bias)
                .vector(&m.hidden2_bias),
        );
        w.section(
            b"PART",
            Payload::default()
                .matrix(&self.particles.visible)
                .matrix(&self.particles.hidden1)
                .matrix(&self.particles.hidden2),
        );
        w.section(b"RNGS", rng_payload(&self.rng));
        w.section(
            b"GRP1",
            Payload::default().indices(self.grouping1.assignment()),
        );
        w.section(
            b"GRP2",
            Payload::default().indices(self.grouping2.assignment()),
        );
        w.section(
            b"REGC",
            Payload::default().f64(self.lambdas.0).f64(self.lambdas.1),
        );
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let s = Sections::parse(bytes, DBM_MAGIC)?;
        let (layers, v, h1, h2) = s.read(b"DIMS", |r| {
            Ok((r.u64()?, r.usize()?, r.usize()?, r.usize()?))
        })?;
        if layers != 2 {
            return Err(Error::Unsupported(format!(
                "{layers}-layer DBM checkpoints"
            )));
        }
        let (epoch, seed) = s.read(b"EPCH", |r| Ok((r.usize()?, r.u64()?)))?;
        let params = DbmParams {
            w1: s.read(b"W001", |r| r.matrix())?,
            w2: s.read(b"W002", |r| r.matrix())?,
            visible_bias: s.read(b"B000", |r| r.vector())?,
            hidden1_bias: s.read(b"B001", |r| r.vector())?,
            hidden2_bias: s.read(b"B002", |r| r.vector())?,
        };
        params.validate().map_err(|_| shape_error("parameters"))?;
        if params.dims() != (v, h1, h2) {
            return Err(shape_error("parameters"));
        }
        let momentum = s.read(b"OPTS", |r| {
            Ok(DbmMomentum {
                w1: r.matrix()?,
                w2: r.matrix()?,
                visible_bias: r.vector()?,
                hidden1_bias: r.vector()?,
                hidden2_bias: r.vector()?,
            })
        })?;
        if momentum.w1.dim() != (v, h1) || momentum.w2.dim() != (h1, h2) {
            return Err(shape_error("optimizer state"));
        }
        let particles = s.read(b"PART", |r| {
            Ok(FantasyParticles {
                visible: r.matrix()?,
                hidden1: r.matrix()?,
                hidden2: r.matrix()?,
            })
        })?;
        if particles.visible.ncols() != v
            || particles.hidden1.ncols() != h1
            || particles.hidden2.ncols() != h2
        {
            return Err(shape_error("particles"));
        }
        let grouping1 = s.read(b"GRP1", read_grouping)?;
        let grouping2 = s.read(b"GRP2", read_grouping)?;
        if grouping1.num_hidden() != h1 || grouping2.num_hidden() != h2 {
            return Err(shape_error("grouping"));
        }
        Ok(DbmCheckpoint {
            params,
            momentum,
            particles,
            grouping1,
            grouping2,
            lambdas: s.read(b"REGC", |r| Ok((r.f64()?, r.f64()?)))?,
            epoch,
            seed,
            rng: s.read(b"RNGS", read_rng)?,
            image_shape: read_image(&s)?,
        })
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            Checkpoint::Rbm(c) => c.to_bytes(),
            Checkpoint::Dbm(c) => c.to_bytes(),
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.starts_with(DBM_MAGIC) {
            Ok(Checkpoint::Dbm(DbmCheckpoint::from_bytes(bytes)?))
        } else {
            Ok(Checkpoint::Rbm(RbmCheckpoint::from_bytes(bytes)?))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Writes via a temporary sibling and a rename, so an interrupted save
    /// never replaces a good checkpoint with a partial one.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
