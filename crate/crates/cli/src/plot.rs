//! Line plots of CSV series: a merged CSV and a PNG rendering.

use std::path::Path;

use exo2ego_core::{Error, Result};
use image::{Rgb, RgbImage};

const WIDTH: u32 = 640;
const HEIGHT: u32 = 480;
const MARGIN: f64 = 40.0;
const PALETTE: [[u8; 3]; 6] = [
    [214, 39, 40],
    [44, 160, 44],
    [31, 119, 180],
    [255, 127, 14],
    [148, 103, 189],
    [140, 86, 75],
];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Series of a two-or-more column CSV with a header; the first column is x.
pub fn read_csv(path: &Path) -> Result<Vec<Series>> {
    let text = std::fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Schema(format!("{}: empty CSV", path.display())))?
        .split(',')
        .collect();
    if header.len() < 2 {
        return Err(Error::Schema(format!("{}: need an x column and at least one series", path.display())));
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("series");
    let mut series: Vec<Series> = header[1..]
        .iter()
        .map(|h| Series {
            name: if header.len() == 2 { stem.to_string() } else { h.trim().to_string() },
            points: Vec::new(),
        })
        .collect();
    for (i, line) in lines.enumerate() {
        let cells: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Schema(format!("{}: row {} is not numeric", path.display(), i + 2)))?;
        if cells.len() != header.len() {
            return Err(Error::Schema(format!("{}: row {} has {} cells", path.display(), i + 2, cells.len())));
        }
        for (s, &y) in series.iter_mut().zip(&cells[1..]) {
            s.points.push((cells[0], y));
        }
    }
    Ok(series)
}

/// Outer join on x; missing cells stay empty.
pub fn merged_csv(series: &[Series]) -> String {
    let mut xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut out = String::from("x");
    for s in series {
        out.push(',');
        out.push_str(&s.name);
    }
    out.push('\n');
    for x in xs {
        out.push_str(&x.to_string());
        for s in series {
            out.push(',');
            if let Some(p) = s.points.iter().find(|p| p.0 == x) {
                out.push_str(&p.1.to_string());
            }
        }
        out.push('\n');
    }
    out
}

fn line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), color: [u8; 3]) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = (a.0 + t * (b.0 - a.0)).round();
        let y = (a.1 + t * (b.1 - a.1)).round();
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, Rgb(color));
        }
    }
}

/// Axes, one colored polyline per series (palette order) and a gray
/// diagonal from the lower-left to the upper-right corner.
pub fn render(series: &[Series]) -> RgbImage {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return img;
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let (w, h) = (WIDTH as f64, HEIGHT as f64);
    let map = |(x, y): (f64, f64)| {
        (
            MARGIN + (x - x0) / (x1 - x0) * (w - 2.0 * MARGIN),
            h - MARGIN - (y - y0) / (y1 - y0) * (h - 2.0 * MARGIN),
        )
    };
    let black = [0, 0, 0];
    line(&mut img, (MARGIN, h - MARGIN), (w - MARGIN, h - MARGIN), black);
    line(&mut img, (MARGIN, MARGIN), (MARGIN, h - MARGIN), black);
    line(&mut img, map((x0, y0)), map((x1, y1)), [170, 170, 170]);
    for (s, color) in series.iter().zip(PALETTE.iter().cycle()) {
        for pair in s.points.windows(2) {
            line(&mut img, map(pair[0]), map(pair[1]), *color);
        }
    }
    img
}

pub fn write(series: &[Series], png: &Path, csv: &Path) -> Result<()> {
    std::fs::write(csv, merged_csv(series)).map_err(|e| Error::Config(format!("{}: {e}", csv.display())))?;
    render(series)
        .save(png)
        .map_err(|e| Error::Config(format!("{}: {e}", png.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_joins_on_x() {
        let a = Series {
            name: "a".into(),
            points: vec![(1.0, 0.1), (2.0, 0.2)],
        };
        let b = Series {
            name: "b".into(),
            points: vec![(2.0, 0.5)],
        };
        assert_eq!(merged_csv(&[a, b]), "x,a,b\n1,0.1,\n2,0.2,0.5\n");
    }

    #[test]
    fn render_draws_series_color() {
        let s = Series {
            name: "s".into(),
            points: vec![(0.0, 0.0), (1.0, 0.5), (2.0, 1.0)],
        };
        let img = render(&[s]);
        assert!(img.pixels().any(|p| p.0 == PALETTE[0]));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cmc.csv");
        std::fs::write(&p, "k,cmc\n1,0.25\n2,1\n").unwrap();
        let s = read_csv(&p).unwrap();
        assert_eq!(s[0].name, "cmc");
        assert_eq!(s[0].points, vec![(1.0, 0.25), (2.0, 1.0)]);
        std::fs::write(&p, "k,cmc\n1,oops\n").unwrap();
        assert!(matches!(read_csv(&p), Err(Error::Schema(_))));
    }
}
