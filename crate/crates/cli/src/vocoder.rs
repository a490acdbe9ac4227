//! Mel-to-output adapters.
//!
//! `identity-mel` writes the converted log-mel as a tensor file. `external` hands the
//! tensor file to a user-supplied program (`<program> [args…] <mel-file> <output>`) that
//! is expected to write a waveform.

use std::path::{Path, PathBuf};
use std::process::Command;

use anyhow::{bail, Context, Result};
use ctefm_core::autograd::Tensor;
use ctefm_core::features::write_tensor;

pub trait Vocoder {
    fn id(&self) -> &str;
    /// Renders `mel` to `output`; returns the path written.
    fn render(&self, mel: &Tensor, output: &Path) -> Result<PathBuf>;
}

pub struct IdentityMel;

impl Vocoder for IdentityMel {
    fn id(&self) -> &str {
        "identity-mel"
    }

    fn render(&self, mel: &Tensor, output: &Path) -> Result<PathBuf> {
        write_tensor(output, mel).with_context(|| format!("writing mel tensor {}", output.display()))?;
        Ok(output.to_path_buf())
    }
}

pub struct ExternalVocoder {
    program: String,
    args: Vec<String>,
}

impl ExternalVocoder {
    /// Splits a command line on whitespace; the first word is the program.
    pub fn from_command_line(cmd: &str) -> Result<Self> {
        let mut words = cmd.split_whitespace().map(str::to_string);
        let Some(program) = words.next() else {
            bail!("external vocoder command is empty");
        };
        Ok(Self { program, args: words.collect() })
    }
}

impl Vocoder for ExternalVocoder {
    fn id(&self) -> &str {
        "external"
    }

    fn render(&self, mel: &Tensor, output: &Path) -> Result<PathBuf> {
        let mel_path = output.with_extension("mel.ctefm");
        write_tensor(&mel_path, mel)?;
        let status = Command::new(&self.program)
            .args(&self.args)
            .arg(&mel_path)
            .arg(output)
            .status()
            .with_context(|| format!("launching vocoder `{}`", self.program))?;
        if !status.success() {
            bail!("vocoder `{}` failed with {status}", self.program);
        }
        if !output.exists() {
            bail!("vocoder `{}` exited cleanly but did not write {}", self.program, output.display());
        }
        Ok(output.to_path_buf())
    }
}

/// `identity-mel` or `external` (which needs a command line).
pub fn vocoder_from_id(id: &str, command: Option<&str>) -> Result<Box<dyn Vocoder>> {
    match (id, command) {
        ("identity-mel", _) => Ok(Box::new(IdentityMel)),
        ("external", Some(cmd)) => Ok(Box::new(ExternalVocoder::from_command_line(cmd)?)),
        ("external", None) => bail!("the external vocoder needs --vocoder-cmd"),
        (other, _) => bail!("unknown vocoder `{other}` (expected identity-mel or external)"),
    }
}
