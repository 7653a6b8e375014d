//! Adapter for driving a real encoder binary. The adapter codes a uniform
//! sequence (anchor-style runs); the tiered simulator path never shells out.
//!
//! Config file is plain `key = value` with `#` comments:
//!
//! ```text
//! binary   = /usr/local/bin/encoder
//! args     = --input {input} --output {output} --qp {qp} --size {width}x{height}
//! rate_log = logs/rate_*.txt     # glob, resolved against workdir
//! workdir  = /tmp/enc-run
//! ```
//!
//! The binary must write a reconstruction to `{output}` (raw planar 4:2:0,
//! same geometry as the input) and a rate log matching the glob with one
//! real number (bits) per line, one line per frame.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use crate::{CodecError, CodecRun, FrameRole};
use crossres_video::{load_yuv, write_yuv, Sequence};

#[derive(Clone, Debug)]
pub struct EncoderConfig {
    pub binary: PathBuf,
    pub args_template: String,
    pub rate_log_glob: String,
    pub workdir: PathBuf,
}

impl EncoderConfig {
    pub fn parse(text: &str) -> Result<Self, CodecError> {
        let mut kv = HashMap::new();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CodecError::Config(format!("expected `key = value`, got: {line}")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let take = |key: &str| {
            kv.get(key)
                .cloned()
                .ok_or_else(|| CodecError::Config(format!("missing required key `{key}`")))
        };
        Ok(EncoderConfig {
            binary: PathBuf::from(take("binary")?),
            args_template: take("args")?,
            rate_log_glob: take("rate_log")?,
            workdir: PathBuf::from(take("workdir")?),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CodecError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| CodecError::Io { path: path.display().to_string(), source: e })?;
        Self::parse(&text)
    }
}

/// Match `pattern` against `name` where `*` spans any run of characters.
fn glob_match(pattern: &str, name: &str) -> bool {
    let parts: Vec<&str> = pattern.split('*').collect();
    if parts.len() == 1 {
        return pattern == name;
    }
    let mut rest = name;
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            continue;
        }
        if i == 0 {
            match rest.strip_prefix(part) {
                Some(r) => rest = r,
                None => return false,
            }
        } else if i == parts.len() - 1 {
            return rest.ends_with(part);
        } else {
            match rest.find(part) {
                Some(pos) => rest = &rest[pos + part.len()..],
                None => return false,
            }
        }
    }
    parts.last().map(|p| p.is_empty()).unwrap_or(false) || true
}

fn find_rate_log(cfg: &EncoderConfig) -> Result<PathBuf, CodecError> {
    let full = cfg.workdir.join(&cfg.rate_log_glob);
    let dir = full.parent().unwrap_or(&cfg.workdir).to_path_buf();
    let pattern = full
        .file_name()
        .map(|s| s.to_string_lossy().to_string())
        .ok_or_else(|| CodecError::Config("rate_log names no file".into()))?;
    let entries = std::fs::read_dir(&dir)
        .map_err(|e| CodecError::Io { path: dir.display().to_string(), source: e })?;
    let mut matches: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .map(|n| glob_match(&pattern, &n.to_string_lossy()))
                .unwrap_or(false)
        })
        .collect();
    matches.sort();
    matches.into_iter().next().ok_or_else(|| CodecError::RateLogParse {
        path: full.display().to_string(),
        line: 0,
        msg: "no file matches the glob".into(),
    })
}

fn parse_rate_log(path: &Path, frames: usize) -> Result<Vec<f64>, CodecError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CodecError::Io { path: path.display().to_string(), source: e })?;
    let mut rates = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bits: f64 = line.parse().map_err(|_| CodecError::RateLogParse {
            path: path.display().to_string(),
            line: i + 1,
            msg: format!("not a number: {line}"),
        })?;
        if bits < 0.0 {
            return Err(CodecError::RateLogParse {
                path: path.display().to_string(),
                line: i + 1,
                msg: "negative bit count".into(),
            });
        }
        rates.push(bits);
    }
    if rates.len() < frames {
        return Err(CodecError::RateLogParse {
            path: path.display().to_string(),
            line: rates.len(),
            msg: format!("{} rate lines for {} frames", rates.len(), frames),
        });
    }
    Ok(rates)
}

/// Run the configured binary over `seq` at one QP and collect per-frame
/// reconstructions and rates. A missing binary is an error, never a
/// fallback.
pub fn external_encode(
    seq: &Sequence,
    roles: &[(FrameRole, i32)],
    qp: i32,
    cfg: &EncoderConfig,
) -> Result<Vec<CodecRun>, CodecError> {
    assert_eq!(seq.frames.len(), roles.len());
    std::fs::create_dir_all(&cfg.workdir)
        .map_err(|e| CodecError::Io { path: cfg.workdir.display().to_string(), source: e })?;
    let input = cfg.workdir.join("input.yuv");
    let output = cfg.workdir.join("recon.yuv");
    write_yuv(&input, &seq.frames)?;

    let (w, h) = (seq.width(), seq.height());
    let args: Vec<String> = cfg
        .args_template
        .replace("{input}", &input.display().to_string())
        .replace("{output}", &output.display().to_string())
        .replace("{qp}", &qp.to_string())
        .replace("{width}", &w.to_string())
        .replace("{height}", &h.to_string())
        .split_whitespace()
        .map(str::to_string)
        .collect();

    let result = Command::new(&cfg.binary).args(&args).current_dir(&cfg.workdir).output();
    let out = match result {
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(CodecError::EncoderNotFound { path: cfg.binary.display().to_string() })
        }
        Err(e) => {
            return Err(CodecError::Io { path: cfg.binary.display().to_string(), source: e })
        }
        Ok(out) => out,
    };
    if !out.status.success() {
        return Err(CodecError::EncoderFailed {
            status: out.status.code().unwrap_or(-1),
            stderr: String::from_utf8_lossy(&out.stderr).trim().to_string(),
        });
    }

    let recon = load_yuv(&output, w, h, seq.frames.len())?;
    let log = find_rate_log(cfg)?;
    let rates = parse_rate_log(&log, seq.frames.len())?;

    Ok(recon
        .frames
        .into_iter()
        .enumerate()
        .map(|(i, frame)| CodecRun {
            frame_index: i,
            role: roles[i].0,
            qp: roles[i].1,
            bits: rates[i],
            recon: frame,
        })
        .collect())
}
