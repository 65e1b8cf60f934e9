//! Plain-text parameter files.
//!
//! Line 1 holds the layer sizes. Each layer then contributes one line per
//! weight row followed by one line of biases. Values use 17 significant digits
//! so a write/read cycle is exact.

use std::fmt::Write as _;
use std::path::Path;

use super::MlpParams;
use crate::error::{Error, Result};

impl MlpParams {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let sizes: Vec<String> = self.layer_sizes.iter().map(|s| s.to_string()).collect();
        out.push_str(&sizes.join(" "));
        out.push('\n');
        for (l, win) in self.layer_sizes.windows(2).enumerate() {
            let (n_in, n_out) = (win[0], win[1]);
            for r in 0..n_out {
                let row = &self.weights[l][r * n_in..(r + 1) * n_in];
                push_values(&mut out, row);
            }
            push_values(&mut out, &self.biases[l]);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("missing layer-size line".into()))?;
        let sizes = header
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|e| Error::Parse(format!("layer size `{t}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let values = lines
            .flat_map(str::split_whitespace)
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("parameter `{t}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        MlpParams::from_flat(&sizes, &values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn push_values(out: &mut String, values: &[f64]) {
    for (k, v) in values.iter().enumerate() {
        if k > 0 {
            out.push(' ');
        }
        write!(out, "{v:.16e}").unwrap();
    }
    out.push('\n');
}

#[cfg(test)]
mod tests {
    use crate::nn::init_xavier;

    use super::*;

    #[test]
    fn text_round_trip_is_exact() {
        let p = init_xavier(&[2, 7, 3, 1], 11).unwrap();
        let text = p.to_text();
        assert!(text.starts_with("2 7 3 1\n"));
        assert_eq!(MlpParams::from_text(&text).unwrap(), p);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let p = init_xavier(&[2, 3, 1], 1).unwrap();
        let text = p.to_text();
        let cut: String = text.lines().take(3).collect::<Vec<_>>().join("\n");
        assert!(MlpParams::from_text(&cut).is_err());
    }
}
