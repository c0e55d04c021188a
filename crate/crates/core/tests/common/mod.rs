#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};

pub fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_psyprobe"))
}

/// A `psyprobe serve-mock` child process on a free port, killed on drop.
pub struct ServeMock {
    child: Child,
    pub url: String,
}

impl ServeMock {
    pub fn spawn(args: &[&str]) -> ServeMock {
        let mut child = bin()
            .args(["serve-mock", "--port", "0"])
            .args(args)
            .env_remove("PSYPROBE_TOKEN")
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .expect("spawn serve-mock");
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap())
            .read_line(&mut line)
            .expect("read listening line");
        let url = line
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected serve-mock output: {line:?}"))
            .to_string();
        ServeMock { child, url }
    }
}

impl Drop for ServeMock {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
