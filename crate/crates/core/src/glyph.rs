//! Lead-marker glyph boxes.
//!
//! A marker is the lead label written in a 5x7 bitmap font and framed by a
//! one-cell border, so every marker is a single connected blob whose interior
//! identifies the lead. The renderer stamps these bitmaps and the layout stage
//! classifies text regions against the same library.

use crate::layout::LeadName;

const FONT_W: usize = 5;
const FONT_H: usize = 7;
/// Border plus one blank cell of padding on every side.
const FRAME: usize = 2;

fn char_rows(c: char) -> [&'static str; FONT_H] {
    match c {
        'I' => [".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."],
        'V' => ["#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."],
        'R' => ["####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"],
        'L' => ["#....", "#....", "#....", "#....", "#....", "#....", "#####"],
        'F' => ["#####", "#....", "#....", "####.", "#....", "#....", "#...."],
        'a' => [".....", ".....", ".###.", "....#", ".####", "#...#", ".####"],
        '1' => ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."],
        '2' => [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"],
        '3' => ["####.", "....#", "....#", ".###.", "....#", "....#", "####."],
        '4' => ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."],
        '5' => ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."],
        '6' => ["..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."],
        other => panic!("no glyph for {other:?}"),
    }
}

/// Binary bitmap in font cells, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Glyph {
    pub lead: LeadName,
    pub width: usize,
    pub height: usize,
    pub cells: Vec<bool>,
}

impl Glyph {
    pub fn for_lead(lead: LeadName) -> Self {
        let label = lead.as_str();
        let n = label.chars().count();
        let text_w = n * (FONT_W + 1) - 1;
        let width = text_w + 2 * FRAME;
        let height = FONT_H + 2 * FRAME;
        let mut cells = vec![false; width * height];
        for x in 0..width {
            cells[x] = true;
            cells[(height - 1) * width + x] = true;
        }
        for y in 0..height {
            cells[y * width] = true;
            cells[y * width + width - 1] = true;
        }
        for (k, c) in label.chars().enumerate() {
            let ox = FRAME + k * (FONT_W + 1);
            for (dy, row) in char_rows(c).iter().enumerate() {
                for (dx, b) in row.bytes().enumerate() {
                    if b == b'#' {
                        cells[(FRAME + dy) * width + ox + dx] = true;
                    }
                }
            }
        }
        Self {
            lead,
            width,
            height,
            cells,
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.cells[y * self.width + x]
    }

    pub fn aspect(&self) -> f64 {
        self.width as f64 / self.height as f64
    }
}

/// One glyph per lead name.
#[derive(Clone, Debug)]
pub struct GlyphLibrary {
    pub glyphs: Vec<Glyph>,
}

impl GlyphLibrary {
    pub fn standard() -> Self {
        Self {
            glyphs: LeadName::ALL.iter().map(|&l| Glyph::for_lead(l)).collect(),
        }
    }

    pub fn get(&self, lead: LeadName) -> Option<&Glyph> {
        self.glyphs.iter().find(|g| g.lead == lead)
    }
}

impl Default for GlyphLibrary {
    fn default() -> Self {
        Self::standard()
    }
}
