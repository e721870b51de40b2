//! CLIP byte-pair-encoding tokenizer.
//!
//! Reads the published `bpe_simple_vocab_16e6.txt(.gz)` merge list and
//! reproduces the reference tokenizer: HTML unescape, whitespace collapse,
//! lowercasing, regex pre-tokenization, byte-to-unicode mapping, then BPE
//! merges by rank. `tokenize` wraps the ids in start/end-of-text tokens and
//! zero-pads to the context length. Over-long prompts are an error.

use std::collections::HashMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use regex::Regex;
use thiserror::Error;

pub const CONTEXT_LENGTH: usize = 77;
/// Merges used by the reference tokenizer: 49152 - 256 - 2.
const MAX_MERGES: usize = 48_894;
const SOT: &str = "<|startoftext|>";
const EOT: &str = "<|endoftext|>";
const WORD_END: &str = "</w>";

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("failed to read vocabulary {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("vocabulary line {line}: expected two space-separated symbols")]
    BadMerge { line: usize },
    #[error("vocabulary contains no merges")]
    NoMerges,
    #[error("token {0:?} is not in the vocabulary")]
    UnknownToken(String),
    #[error("prompt needs {needed} tokens but the context holds {context}")]
    TooLong { needed: usize, context: usize },
}

/// Maps every byte to a printable unicode character, as the reference does.
fn bytes_to_unicode() -> [char; 256] {
    let mut printable: Vec<u32> = (u32::from(b'!')..=u32::from(b'~'))
        .chain(0xA1..=0xAC)
        .chain(0xAE..=0xFF)
        .collect();
    let mut chars: Vec<u32> = printable.clone();
    let mut extra = 0;
    for b in 0..256u32 {
        if !printable.contains(&b) {
            printable.push(b);
            chars.push(256 + extra);
            extra += 1;
        }
    }
    let mut table = ['\0'; 256];
    for (b, c) in printable.into_iter().zip(chars) {
        table[b as usize] = char::from_u32(c).expect("valid scalar");
    }
    table
}

#[derive(Debug, Clone)]
pub struct ClipTokenizer {
    byte_encoder: [char; 256],
    encoder: HashMap<String, u32>,
    ranks: HashMap<(String, String), usize>,
    pattern: Regex,
    whitespace: Regex,
    sot: u32,
    eot: u32,
}

impl ClipTokenizer {
    /// Loads a merge list, gzip-compressed or plain.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, TokenizerError> {
        let path = path.as_ref();
        let io_err = |source| TokenizerError::Io {
            path: path.to_owned(),
            source,
        };
        let raw = fs::read(path).map_err(io_err)?;
        let text = if raw.starts_with(&[0x1f, 0x8b]) {
            let mut s = String::new();
            GzDecoder::new(raw.as_slice())
                .read_to_string(&mut s)
                .map_err(io_err)?;
            s
        } else {
            String::from_utf8(raw).map_err(|e| {
                io_err(std::io::Error::new(std::io::ErrorKind::InvalidData, e))
            })?
        };
        Self::from_merges_text(&text)
    }

    /// Parses the merge list; the first line is a version header.
    pub fn from_merges_text(text: &str) -> Result<Self, TokenizerError> {
        let mut merges = Vec::new();
        for (i, line) in text.split('\n').enumerate().skip(1).take(MAX_MERGES) {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                    merges.push((a.to_owned(), b.to_owned()));
                }
                _ => return Err(TokenizerError::BadMerge { line: i + 1 }),
            }
        }
        if merges.is_empty() {
            return Err(TokenizerError::NoMerges);
        }
        let byte_encoder = bytes_to_unicode();
        // base symbols in the reference order: printable bytes first, then
        // the remapped ones, which is ascending code point order
        let mut symbols = byte_encoder;
        symbols.sort_unstable();
        let mut vocab: Vec<String> = symbols.iter().map(|c| c.to_string()).collect();
        vocab.extend(symbols.iter().map(|c| format!("{c}{WORD_END}")));
        vocab.extend(merges.iter().map(|(a, b)| format!("{a}{b}")));
        vocab.push(SOT.to_owned());
        vocab.push(EOT.to_owned());
        let encoder: HashMap<String, u32> = vocab
            .into_iter()
            .enumerate()
            .map(|(i, v)| (v, i as u32))
            .collect();
        let ranks = merges.into_iter().enumerate().map(|(i, m)| (m, i)).collect();
        Ok(Self {
            byte_encoder,
            sot: encoder[SOT],
            eot: encoder[EOT],
            encoder,
            ranks,
            pattern: Regex::new(
                r"(?i)<\|startoftext\|>|<\|endoftext\|>|'s|'t|'re|'ve|'m|'ll|'d|\p{L}+|\p{N}|[^\s\p{L}\p{N}]+",
            )
            .expect("static pattern"),
            whitespace: Regex::new(r"\s+").expect("static pattern"),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.encoder.len()
    }

    pub fn start_token(&self) -> u32 {
        self.sot
    }

    pub fn end_token(&self) -> u32 {
        self.eot
    }

    fn clean(&self, text: &str) -> String {
        let text = unescape_html(&unescape_html(text));
        self.whitespace
            .replace_all(text.trim(), " ")
            .trim()
            .to_lowercase()
    }

    fn bpe(&self, token: &str) -> Vec<String> {
        let chars: Vec<char> = token.chars().collect();
        let Some((last, init)) = chars.split_last() else {
            return Vec::new();
        };
        let mut word: Vec<String> = init.iter().map(|c| c.to_string()).collect();
        word.push(format!("{last}{WORD_END}"));

        while word.len() > 1 {
            let best = word
                .windows(2)
                .filter_map(|w| {
                    self.ranks
                        .get(&(w[0].clone(), w[1].clone()))
                        .map(|&r| (r, w[0].clone(), w[1].clone()))
                })
                .min_by_key(|(r, _, _)| *r);
            let Some((_, first, second)) = best else {
                break;
            };
            let mut merged = Vec::with_capacity(word.len());
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len() && word[i] == first && word[i + 1] == second {
                    merged.push(format!("{first}{second}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut word[i]));
                    i += 1;
                }
            }
            word = merged;
        }
        word
    }

    /// Token ids without start/end markers or padding.
    pub fn encode(&self, text: &str) -> Result<Vec<u32>, TokenizerError> {
        let cleaned = self.clean(text);
        let mut ids = Vec::new();
        for m in self.pattern.find_iter(&cleaned) {
            let mapped: String = m
                .as_str()
                .bytes()
                .map(|b| self.byte_encoder[b as usize])
                .collect();
            for piece in self.bpe(&mapped) {
                let id = self
                    .encoder
                    .get(&piece)
                    .ok_or_else(|| TokenizerError::UnknownToken(piece.clone()))?;
                ids.push(*id);
            }
        }
        Ok(ids)
    }

    /// `[SOT] ids [EOT]` zero-padded to `context`.
    pub fn tokenize(&self, text: &str, context: usize) -> Result<Vec<u32>, TokenizerError> {
        let ids = self.encode(text)?;
        let needed = ids.len() + 2;
        if needed > context {
            return Err(TokenizerError::TooLong { needed, context });
        }
        let mut row = Vec::with_capacity(context);
        row.push(self.sot);
        row.extend(ids);
        row.push(self.eot);
        row.resize(context, 0);
        Ok(row)
    }
}

/// Decodes the HTML entities prompts realistically contain: the five XML
/// entities, `&nbsp;` and numeric references.
fn unescape_html(text: &str) -> String {
    if !text.contains('&') {
        return text.to_owned();
    }
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(pos) = rest.find('&') {
        out.push_str(&rest[..pos]);
        rest = &rest[pos..];
        let decoded = rest.find(';').filter(|&end| end <= 10).and_then(|end| {
            let entity = &rest[1..end];
            let ch = match entity {
                "amp" => Some('&'),
                "lt" => Some('<'),
                "gt" => Some('>'),
                "quot" => Some('"'),
                "apos" => Some('\''),
                "nbsp" => Some('\u{a0}'),
                _ => entity.strip_prefix('#').and_then(|num| {
                    let code = match num.strip_prefix(['x', 'X']) {
                        Some(hex) => u32::from_str_radix(hex, 16).ok(),
                        None => num.parse().ok(),
                    };
                    code.and_then(char::from_u32)
                }),
            };
            ch.map(|c| (c, end))
        });
        match decoded {
            Some((c, end)) => {
                out.push(c);
                rest = &rest[end + 1..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}
