use std::fmt::Write as _;
use std::path::Path;

use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::rbm::RbmParams;

use super::ais::AisEstimate;
use super::sparseness::SparsenessReport;

/// Mean of `−F(x) − log Z` over the rows of `test`. With an AIS estimate of
/// `log Z` this is a stochastic lower bound in expectation.
pub fn avg_test_log_prob(params: &RbmParams, test: ArrayView2<f64>, log_z: f64) -> Result<f64> {
    let free = params.free_energy_batch(test)?;
    Ok(-free.mean().unwrap_or(f64::NAN) - log_z)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub model: String,
    pub num_examples: usize,
    pub exact_log_z: Option<f64>,
    pub ais: Option<AisEstimate>,
    pub avg_test_log_prob: Option<f64>,
    pub sparseness: Option<SparsenessReport>,
    pub probe_accuracy: Option<f64>,
}

impl EvalReport {
    /// The log partition function used for log-probabilities: exact if
    /// available, AIS otherwise.
    pub fn log_z(&self) -> Option<f64> {
        self.exact_log_z.or(self.ais.as_ref().map(|a| a.log_z_mean))
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("model".to_string(), self.model.clone()),
            ("num_examples".to_string(), self.num_examples.to_string()),
        ];
        let mut push = |k: &str, v: f64| out.push((k.to_string(), format_real(v)));
        if let Some(z) = self.exact_log_z {
            push("exact_log_z", z);
        }
        if let Some(a) = &self.ais {
            push("ais_log_z_mean", a.log_z_mean);
            push("ais_log_z_ci_low", a.log_z_ci_low);
            push("ais_log_z_ci_high", a.log_z_ci_high);
            push("ais_effective_sample_size", a.effective_sample_size);
            push("ais_log_weight_std", a.log_weight_std);
        }
        if let Some(lp) = self.avg_test_log_prob {
            push("avg_test_log_prob", lp);
        }
        if let Some(s) = &self.sparseness {
            push("sparseness_min", s.min);
            push("sparseness_max", s.max);
            push("sparseness_mean", s.mean);
            if let Some(g) = s.group_mean {
                push("group_sparseness_mean", g);
            }
        }
        if let Some(acc) = self.probe_accuracy {
            push("probe_accuracy", acc);
        }
        out
    }

    pub fn to_key_value(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "Evaluation of {} ({} examples)",
            self.model, self.num_examples
        );
        if let Some(z) = self.exact_log_z {
            let _ = writeln!(s, "  log Z (exact):        {z:.6}");
        }
        if let Some(a) = &self.ais {
            let _ = writeln!(
                s,
                "  log Z (AIS):          {:.6}  [{:.6}, {:.6}]  ESS {:.1}",
                a.log_z_mean, a.log_z_ci_low, a.log_z_ci_high, a.effective_sample_size
            );
        }
        if let Some(lp) = self.avg_test_log_prob {
            let _ = writeln!(s, "  avg test log-prob:    {lp:.4}");
        }
        if let Some(sp) = &self.sparseness {
            let _ = writeln!(
                s,
                "  sparseness:           mean {:.4} in [{:.4}, {:.4}]",
                sp.mean, sp.min, sp.max
            );
            if let Some(g) = sp.group_mean {
                let _ = writeln!(s, "  group sparseness:     mean {g:.4}");
            }
        }
        if let Some(acc) = self.probe_accuracy {
            let _ = writeln!(s, "  linear probe:         {acc:.4}");
        }
        s
    }

    /// Writes `report.txt` and `report.kv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let text = dir.join("report.txt");
        std::fs::write(&text, self.to_text()).map_err(|e| Error::io(&text, e))?;
        let kv = dir.join("report.kv");
        std::fs::write(&kv, self.to_key_value()).map_err(|e| Error::io(&kv, e))
    }
}

/// Round-trippable decimal, with `inf`/`-inf`/`nan` spelled out.
fn format_real(v: f64) -> String {
    if v.is_finite() {
        format!("{v:?}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Parses a key=value report back into pairs, skipping blank lines.
pub fn parse_key_value(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rbm::VisibleType;
    use ndarray::array;

    #[test]
    fn certain_example_has_zero_log_prob() {
        let p = RbmParams::new(
            array![[0.0], [0.0]],
            array![40.0, -40.0],
            array![-40.0],
            VisibleType::Binary,
        )
        .unwrap();
        let lz = crate::eval::exact_log_partition(&p).unwrap();
        let lp = avg_test_log_prob(&p, array![[1.0, 0.0]].view(), lz).unwrap();
        assert!(lp.abs() < 1e-12);
    }

    #[test]
    fn key_value_round_trip() {
        let r = EvalReport {
            model: "rbm".into(),
            num_examples: 3,
            exact_log_z: Some(1.25),
            ais: Some(AisEstimate {
                log_z_mean: 2.0,
                log_z_ci_low: f64::NEG_INFINITY,
                log_z_ci_high: 2.5,
                effective_sample_size: 10.0,
                log_weight_std: 0.1,
                log_z_base: 1.0,
            }),
            ..EvalReport::default()
        };
        let kv = parse_key_value(&r.to_key_value());
        assert!(kv.contains(&("exact_log_z".into(), "1.25".into())));
        assert!(kv.contains(&("ais_log_z_ci_low".into(), "-inf".into())));
        assert_eq!(r.log_z(), Some(1.25));
    }
}
