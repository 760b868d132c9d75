#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

pub fn polyprobe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polyprobe"))
        .args(args)
        .env_remove("SOURCE_DATE_EPOCH")
        .env("RUST_LOG", "error")
        .output()
        .expect("polyprobe runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Paths for one isolated pipeline run under `root`.
pub struct Workdir {
    pub data: PathBuf,
    pub cache: PathBuf,
    pub out: PathBuf,
}

impl Workdir {
    pub fn new(root: &Path) -> Self {
        Workdir {
            data: root.join("data"),
            cache: root.join("cache"),
            out: root.join("out"),
        }
    }

    /// Shared flags plus `extra`, for any subcommand.
    pub fn run(&self, command: &str, extra: &[&str]) -> Output {
        let config = fixtures().join("run_config.json");
        let input = fixtures().join("raw");
        let scorer = format!("reference:{}", fixtures().join("reference_model.json").display());
        let mut args = vec![
            command,
            "--config",
            path(&config),
            "--input",
            path(&input),
            "--data",
            path(&self.data),
            "--cache-dir",
            path(&self.cache),
            "--out",
            path(&self.out),
        ];
        if !extra.contains(&"--scorer") {
            args.extend(["--scorer", &scorer]);
        }
        args.extend_from_slice(extra);
        polyprobe(&args)
    }

    pub fn ok(&self, command: &str, extra: &[&str]) -> String {
        let o = self.run(command, extra);
        assert!(o.status.success(), "{command} {extra:?} failed: {}", stderr(&o));
        stdout(&o)
    }
}
