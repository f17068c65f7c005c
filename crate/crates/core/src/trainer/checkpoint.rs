//! Versioned text checkpoint: config echo, RNG state, and every parameter
//! buffer with its shape. Values are stored as hexadecimal `f64` bits, so a
//! save/load cycle is bitwise exact.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::trainer::artifacts::write_atomic;

const MAGIC: &str = "autocon-checkpoint v1";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config_text: String,
    pub config_hash: String,
    pub rng_seed: u64,
    pub rng_word_pos: u128,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

pub fn save_checkpoint(
    path: &Path,
    config_text: &str,
    config_hash: &str,
    rng_seed: u64,
    rng_word_pos: u128,
    tensors: &[(String, &Tensor)],
) -> Result<()> {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str(&format!("config_hash = {config_hash}\n"));
    out.push_str("[config]\n");
    out.push_str(config_text);
    out.push_str("[rng]\n");
    out.push_str(&format!("seed = {rng_seed}\n"));
    out.push_str(&format!("word_pos = {rng_word_pos}\n"));
    for (name, t) in tensors {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        out.push_str(&format!("[tensor {name} {}]\n", dims.join(" ")));
        for chunk in t.data().chunks(8) {
            let words: Vec<String> = chunk.iter().map(|v| format!("{:016x}", v.to_bits())).collect();
            out.push_str(&words.join(" "));
            out.push('\n');
        }
    }
    out.push_str("[end]\n");
    write_atomic(path, out.as_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines().peekable();
    if lines.next() != Some(MAGIC) {
        return Err(Error::Data(format!("{}: not a checkpoint file", path.display())));
    }
    let hash_line = lines.next().unwrap_or_default();
    let config_hash = hash_line
        .strip_prefix("config_hash = ")
        .ok_or_else(|| Error::Data("missing config_hash line".into()))?
        .to_string();
    if lines.next() != Some("[config]") {
        return Err(Error::Data("missing [config] section".into()));
    }
    let mut config_text = String::new();
    while let Some(&line) = lines.peek() {
        if line.starts_with('[') {
            break;
        }
        config_text.push_str(line);
        config_text.push('\n');
        lines.next();
    }
    if lines.next() != Some("[rng]") {
        return Err(Error::Data("missing [rng] section".into()));
    }
    let seed_line = lines.next().unwrap_or_default();
    let rng_seed: u64 = seed_line
        .strip_prefix("seed = ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Data(format!("bad rng seed line '{seed_line}'")))?;
    let pos_line = lines.next().unwrap_or_default();
    let rng_word_pos: u128 = pos_line
        .strip_prefix("word_pos = ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Data(format!("bad rng word_pos line '{pos_line}'")))?;

    let mut tensors = Vec::new();
    while let Some(line) = lines.next() {
        if line == "[end]" {
            return Ok(Checkpoint { config_text, config_hash, rng_seed, rng_word_pos, tensors });
        }
        let inner = line
            .strip_prefix("[tensor ")
            .and_then(|s| s.strip_suffix(']'))
            .ok_or_else(|| Error::Data(format!("unexpected checkpoint line '{line}'")))?;
        let mut parts = inner.split_whitespace();
        let name = parts
            .next()
            .ok_or_else(|| Error::Data("tensor section without a name".into()))?
            .to_string();
        let shape: Vec<usize> = parts
            .map(|d| d.parse().map_err(|_| Error::Data(format!("bad dim '{d}' in '{line}'"))))
            .collect::<Result<_>>()?;
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        while data.len() < numel {
            let row = lines
                .next()
                .ok_or_else(|| Error::Data(format!("tensor '{name}' truncated")))?;
            for word in row.split_whitespace() {
                let bits = u64::from_str_radix(word, 16)
                    .map_err(|_| Error::Data(format!("bad value '{word}' in tensor '{name}'")))?;
                data.push(f64::from_bits(bits));
            }
        }
        if data.len() != numel {
            return Err(Error::Data(format!("tensor '{name}' has extra values")));
        }
        tensors.push((name, Tensor::new(&shape, data)?));
    }
    Err(Error::Data("checkpoint missing [end] marker".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bitwise_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.txt");
        let t1 = Tensor::new(&[2, 3], vec![1.0, -0.5, 3.25e-300, f64::MIN_POSITIVE, 2e17, -0.0]).unwrap();
        let t2 = Tensor::new(&[2], vec![0.1 + 0.2, std::f64::consts::PI]).unwrap();
        let named = vec![("a".to_string(), &t1), ("b".to_string(), &t2)];
        save_checkpoint(&path, "seed = 3\n", "cafebabe", 3, 12345678901234567890, &named).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.config_hash, "cafebabe");
        assert_eq!(ck.config_text, "seed = 3\n");
        assert_eq!(ck.rng_seed, 3);
        assert_eq!(ck.rng_word_pos, 12345678901234567890);
        assert_eq!(ck.tensor("a").unwrap(), &t1);
        assert_eq!(ck.tensor("b").unwrap(), &t2);
        // Save again: identical bytes.
        let bytes1 = std::fs::read(&path).unwrap();
        save_checkpoint(&path, "seed = 3\n", "cafebabe", 3, 12345678901234567890, &named).unwrap();
        assert_eq!(bytes1, std::fs::read(&path).unwrap());
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.txt");
        std::fs::write(&path, "hello\n").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
