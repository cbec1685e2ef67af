//! Plain-text checkpoint codec.
//!
//! A checkpoint is a whitespace-separated token stream. Floats are written as
//! the 16-digit hex of their IEEE-754 bits, so a save/load round trip is
//! bit-exact. Sections are introduced by literal tags that the reader checks.

use crate::error::{Error, Result};

pub const MAGIC: &str = "flowlab-checkpoint";
pub const VERSION: usize = 1;

#[derive(Default)]
pub struct Writer {
    out: String,
    col: usize,
}

impl Writer {
    pub fn new() -> Self {
        let mut w = Writer::default();
        w.tag(MAGIC).usize(VERSION).newline();
        w
    }

    fn token(&mut self, t: &str) -> &mut Self {
        if self.col > 0 {
            self.out.push(' ');
        }
        self.out.push_str(t);
        self.col += 1;
        self
    }

    pub fn newline(&mut self) -> &mut Self {
        self.out.push('\n');
        self.col = 0;
        self
    }

    pub fn tag(&mut self, t: &str) -> &mut Self {
        debug_assert!(!t.is_empty() && !t.contains(char::is_whitespace));
        self.token(t)
    }

    pub fn usize(&mut self, v: usize) -> &mut Self {
        self.token(&v.to_string())
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.token(&v.to_string())
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.token(&format!("{:016x}", v.to_bits()))
    }

    /// Length-prefixed float list, eight per line.
    pub fn f64s(&mut self, vs: &[f64]) -> &mut Self {
        self.usize(vs.len()).newline();
        for chunk in vs.chunks(8) {
            for &v in chunk {
                self.f64(v);
            }
            self.newline();
        }
        self
    }

    pub fn finish(self) -> String {
        self.out
    }
}

pub struct Reader<'a> {
    tokens: std::iter::Peekable<std::str::SplitWhitespace<'a>>,
}

impl<'a> Reader<'a> {
    pub fn new(text: &'a str) -> Result<Self> {
        let mut r = Reader {
            tokens: text.split_whitespace().peekable(),
        };
        r.expect(MAGIC)?;
        let v = r.usize()?;
        if v != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {v}")));
        }
        Ok(r)
    }

    fn next(&mut self) -> Result<&'a str> {
        self.tokens
            .next()
            .ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))
    }

    pub fn peek(&mut self) -> Option<&'a str> {
        self.tokens.peek().copied()
    }

    pub fn expect(&mut self, tag: &str) -> Result<()> {
        let t = self.next()?;
        if t != tag {
            return Err(Error::Checkpoint(format!("expected `{tag}`, found `{t}`")));
        }
        Ok(())
    }

    pub fn token(&mut self) -> Result<&'a str> {
        self.next()
    }

    pub fn usize(&mut self) -> Result<usize> {
        let t = self.next()?;
        t.parse()
            .map_err(|_| Error::Checkpoint(format!("expected integer, found `{t}`")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        let t = self.next()?;
        t.parse()
            .map_err(|_| Error::Checkpoint(format!("expected integer, found `{t}`")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        let t = self.next()?;
        u64::from_str_radix(t, 16)
            .map(f64::from_bits)
            .map_err(|_| Error::Checkpoint(format!("expected hex float, found `{t}`")))
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.usize()?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn is_done(&mut self) -> bool {
        self.peek().is_none()
    }
}
