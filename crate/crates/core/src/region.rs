use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Axis-aligned pixel box with inclusive corners.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x0 > x1 || y0 > y1 {
            return Err(Error::InvalidInput(format!("inverted box ({x0},{y0})-({x1},{y1})")));
        }
        Ok(Rect { x0, y0, x1, y1 })
    }

    pub fn full(h: usize, w: usize) -> Self {
        Rect {
            x0: 0,
            y0: 0,
            x1: w - 1,
            y1: h - 1,
        }
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.y0..=self.y1).contains(&row) && (self.x0..=self.x1).contains(&col)
    }

    pub fn fits(&self, h: usize, w: usize) -> bool {
        self.x1 < w && self.y1 < h
    }
}

impl fmt::Display for Rect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.x0, self.y0, self.x1, self.y1)
    }
}

impl FromStr for Rect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("box `{s}`: {e}")))?;
        match v[..] {
            [x0, y0, x1, y1] => Rect::new(x0, y0, x1, y1),
            _ => Err(Error::Format(format!("box `{s}` needs four coordinates"))),
        }
    }
}
