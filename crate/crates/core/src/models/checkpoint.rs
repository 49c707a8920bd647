//! Binary checkpoint format.
//!
//! ```text
//! ntkit-ckpt v1
//! mode=<las|nt>
//! config feat=.. enc_layers=.. enc_width=.. dec_layers=.. dec_width=.. embed=.. att=.. heads=.. vocab=..
//! inventory=<16 hex digits>
//! field <name> <len>        (one line per array, in ModelParams::visit order)
//! end
//! <little-endian f64 values of every field, concatenated>
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::params::{ModelConfig, ModelMode, ModelParams};
use crate::error::{read_input, Error, Result};

pub const MAGIC: &str = "ntkit-ckpt v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub mode: ModelMode,
    pub inventory_hash: String,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        writeln!(out, "{MAGIC}").unwrap();
        writeln!(out, "mode={}", self.mode).unwrap();
        writeln!(out, "config {}", self.params.config.to_header()).unwrap();
        writeln!(out, "inventory={}", self.inventory_hash).unwrap();
        for (name, len) in self.params.layout() {
            writeln!(out, "field {name} {len}").unwrap();
        }
        writeln!(out, "end").unwrap();
        self.params.visit(|_, d| {
            for v in d {
                out.extend_from_slice(&v.to_le_bytes());
            }
        });
        out
    }

    /// Parses a checkpoint; when `expected_inventory` is given the stored
    /// inventory hash must match it.
    pub fn from_bytes(bytes: &[u8], expected_inventory: Option<&str>) -> Result<Self> {
        let err = |m: String| Error::Checkpoint(m);
        let mut pos = 0;
        let mut next_line = || -> Result<&str> {
            let rest = &bytes[pos..];
            let nl = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| err("truncated header".into()))?;
            pos += nl + 1;
            std::str::from_utf8(&rest[..nl]).map_err(|_| err("header is not UTF-8".into()))
        };
        if next_line()? != MAGIC {
            return Err(err(format!("missing `{MAGIC}` header")));
        }
        let mode: ModelMode = next_line()?
            .strip_prefix("mode=")
            .ok_or_else(|| err("missing mode line".into()))?
            .parse()?;
        let config = ModelConfig::from_header(
            next_line()?
                .strip_prefix("config ")
                .ok_or_else(|| err("missing config line".into()))?,
        )?;
        let inventory_hash = next_line()?
            .strip_prefix("inventory=")
            .ok_or_else(|| err("missing inventory line".into()))?
            .to_string();
        if let Some(want) = expected_inventory {
            if want != inventory_hash {
                return Err(err(format!(
                    "checkpoint was trained with inventory {inventory_hash}, not {want}"
                )));
            }
        }
        let mut fields = Vec::new();
        loop {
            let line = next_line()?;
            if line == "end" {
                break;
            }
            let mut parts = line.split_whitespace();
            match (parts.next(), parts.next(), parts.next()) {
                (Some("field"), Some(name), Some(len)) => {
                    let len: usize = len.parse().map_err(|_| err(format!("bad field line `{line}`")))?;
                    fields.push((name.to_string(), len));
                }
                _ => return Err(err(format!("bad field line `{line}`"))),
            }
        }
        let mut params = ModelParams::zeros(config)?;
        let layout = params.layout();
        if layout != fields {
            let mismatch = layout
                .iter()
                .zip(&fields)
                .find(|(a, b)| a != b)
                .map(|(a, b)| format!("expected {} ({}), found {} ({})", a.0, a.1, b.0, b.1))
                .unwrap_or_else(|| format!("expected {} fields, found {}", layout.len(), fields.len()));
            return Err(Error::shape("checkpoint fields", "layout implied by config", mismatch));
        }
        let body = &bytes[pos..];
        let n = params.num_params();
        if body.len() != n * 8 {
            return Err(err(format!("expected {} parameter bytes, found {}", n * 8, body.len())));
        }
        let flat: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.load_flat(&flat)?;
        Ok(Self {
            mode,
            inventory_hash,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, expected_inventory: Option<&str>) -> Result<Self> {
        Self::from_bytes(&read_input(path.as_ref())?, expected_inventory)
    }
}
