#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

/// A model small enough that a few training steps take well under a second.
pub const TINY_CONFIG: &str = "\
model.width = 8
model.head_width = 8
model.attn_heads = 2
agf.heads = 2
data.size = 32
data.train = 4
data.eval = 2
train.lr = 0.001
";

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn ivgf(args: &[&str]) -> Run {
    ivgf_env(args, &[])
}

/// Runs the binary with `IVGF_SEED` cleared unless set in `env`.
pub fn ivgf_env(args: &[&str], env: &[(&str, &str)]) -> Run {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ivgf"));
    cmd.args(args).env_remove("IVGF_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    let Output { status, stdout, stderr } = cmd.output().expect("spawn ivgf");
    Run {
        code: status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&stdout).into_owned(),
        stderr: String::from_utf8_lossy(&stderr).into_owned(),
    }
}

pub fn write(path: &Path, text: &str) -> String {
    std::fs::write(path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
