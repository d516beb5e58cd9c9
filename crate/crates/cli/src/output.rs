use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

/// Output directory that remembers what was written for the manifest.
pub struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

#[derive(Serialize)]
struct InputRecord {
    path: String,
    bytes: u64,
}

#[derive(Serialize)]
struct Manifest<'a, A: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    args: &'a A,
    inputs: Vec<InputRecord>,
    outputs: &'a [String],
    selected: serde_json::Value,
}

impl Output {
    pub fn new(dir: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Output { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn write(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> sparse_fts::Result<()>,
    ) -> anyhow::Result<()> {
        let path = self.dir.join(name);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(file);
        f(&mut w)?;
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> anyhow::Result<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        })
    }

    /// Writes `<command>.manifest.json` listing arguments, inputs, outputs and selections.
    pub fn finish(
        mut self,
        command: &str,
        args: &impl Serialize,
        inputs: &[&Path],
        selected: serde_json::Value,
    ) -> anyhow::Result<()> {
        let inputs = inputs
            .iter()
            .map(|p| InputRecord {
                path: p.display().to_string(),
                bytes: fs::metadata(p).map(|m| m.len()).unwrap_or(0),
            })
            .collect();
        let outputs = self.files.clone();
        let manifest = Manifest {
            tool: "sfts",
            version: env!("CARGO_PKG_VERSION"),
            command,
            args,
            inputs,
            outputs: &outputs,
            selected,
        };
        self.write_json(&format!("{command}.manifest.json"), &manifest)
    }
}
