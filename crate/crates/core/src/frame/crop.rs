use super::{Frame, FrameError};

/// Grayscale level a pixel must exceed to count as foreground.
pub const CROP_THRESHOLD: f64 = 10.0;

/// Largest 4-connected foreground component and its inclusive bounding box.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub area: usize,
    /// Row-major membership mask over the full image.
    pub mask: Vec<bool>,
}

impl ComponentBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }
}

/// Labels 4-connected components of `foreground` and returns the largest.
/// Ties go to the component whose first pixel comes earliest in raster order.
pub fn largest_component(width: usize, height: usize, foreground: &[bool]) -> Option<ComponentBox> {
    assert_eq!(foreground.len(), width * height);
    let mut label = vec![0u32; foreground.len()];
    let mut best: Option<(u32, usize, [usize; 4])> = None;
    let mut next = 0u32;
    let mut stack = Vec::new();

    for seed in 0..foreground.len() {
        if !foreground[seed] || label[seed] != 0 {
            continue;
        }
        next += 1;
        label[seed] = next;
        stack.push(seed);
        let mut area = 0;
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        while let Some(i) = stack.pop() {
            area += 1;
            let (x, y) = (i % width, i / width);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            let mut visit = |j: usize| {
                if foreground[j] && label[j] == 0 {
                    label[j] = next;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < width {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - width);
            }
            if y + 1 < height {
                visit(i + width);
            }
        }
        if best.is_none_or(|(_, a, _)| area > a) {
            best = Some((next, area, [x0, y0, x1, y1]));
        }
    }

    best.map(|(id, area, [x0, y0, x1, y1])| ComponentBox {
        x0,
        y0,
        x1,
        y1,
        area,
        mask: label.iter().map(|&l| l == id).collect(),
    })
}

/// Bilinear resampling with pixel-centre alignment.
pub fn resize_bilinear(src: &[u8], sw: usize, sh: usize, channels: usize, dw: usize, dh: usize) -> Vec<u8> {
    let axis = |d: usize, sn: usize, dn: usize| -> (usize, usize, f64) {
        let s = ((d as f64 + 0.5) * sn as f64 / dn as f64 - 0.5).clamp(0.0, (sn - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(sn - 1);
        (i0, i1, s - i0 as f64)
    };
    let cols: Vec<_> = (0..dw).map(|x| axis(x, sw, dw)).collect();
    let mut out = vec![0u8; dw * dh * channels];
    for y in 0..dh {
        let (r0, r1, fy) = axis(y, sh, dh);
        for (x, &(c0, c1, fx)) in cols.iter().enumerate() {
            for ch in 0..channels {
                let at = |r: usize, c: usize| src[(r * sw + c) * channels + ch] as f64;
                let top = at(r0, c0) * (1.0 - fx) + at(r0, c1) * fx;
                let bottom = at(r1, c0) * (1.0 - fx) + at(r1, c1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                out[(y * dw + x) * channels + ch] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    out
}

/// Keeps only the circular endoscope view: threshold the grayscale image,
/// take the largest component, zero everything outside it, crop to its
/// bounding box and scale the crop back to the input size.
///
/// Callers fall back to the unmodified frame on [`FrameError::NoForeground`].
pub fn crop_surgical_view(frame: &Frame) -> Result<Frame, FrameError> {
    let (w, h) = (frame.width(), frame.height());
    let foreground: Vec<bool> = frame.luma().iter().map(|&v| v > CROP_THRESHOLD).collect();
    let comp = largest_component(w, h, &foreground).ok_or(FrameError::NoForeground)?;

    let c = frame.channels().count();
    let (cw, ch) = (comp.width(), comp.height());
    let mut cropped = vec![0u8; cw * ch * c];
    for y in 0..ch {
        for x in 0..cw {
            let (sx, sy) = (comp.x0 + x, comp.y0 + y);
            if comp.mask[sy * w + sx] {
                let dst = (y * cw + x) * c;
                cropped[dst..dst + c].copy_from_slice(frame.pixel(sx, sy));
            }
        }
    }
    let pixels = resize_bilinear(&cropped, cw, ch, c, w, h);
    Frame::new(w, h, frame.channels(), pixels, frame.timestamp_s)
}

#[cfg(test)]
mod tests {
    use super::super::Channels;
    use super::*;

    fn disc(size: usize, cx: i64, cy: i64, r: i64, value: u8) -> Frame {
        let mut px = vec![0u8; size * size];
        for y in 0..size as i64 {
            for x in 0..size as i64 {
                if (x - cx).pow(2) + (y - cy).pow(2) <= r * r {
                    px[(y as usize) * size + x as usize] = value;
                }
            }
        }
        Frame::new(size, size, Channels::Gray, px, 0.0).unwrap()
    }

    #[test]
    fn disc_bbox() {
        let f = disc(64, 32, 32, 20, 200);
        let fg: Vec<bool> = f.luma().iter().map(|&v| v > CROP_THRESHOLD).collect();
        let comp = largest_component(64, 64, &fg).unwrap();
        assert_eq!((comp.x0, comp.y0, comp.x1, comp.y1), (12, 12, 52, 52));
        let out = crop_surgical_view(&f).unwrap();
        assert_eq!((out.width(), out.height()), (64, 64));
        // disc now touches the frame edges at the midpoints, corners stay dark
        assert!(out.pixel(32, 0)[0] > 100);
        assert!(out.pixel(0, 32)[0] > 100);
        assert_eq!(out.pixel(0, 0)[0], 0);
        assert_eq!(out.pixel(63, 63)[0], 0);
    }

    #[test]
    fn black_frame_has_no_foreground() {
        let f = Frame::filled(16, 16, Channels::Rgb, 0, 0.0).unwrap();
        assert!(matches!(crop_surgical_view(&f), Err(FrameError::NoForeground)));
    }

    #[test]
    fn bright_frame_is_identity() {
        let px: Vec<u8> = (0..20 * 12).map(|i| 50 + (i % 200) as u8).collect();
        let f = Frame::new(20, 12, Channels::Gray, px, 3.0).unwrap();
        assert_eq!(crop_surgical_view(&f).unwrap(), f);
    }

    #[test]
    fn smaller_component_is_masked_out() {
        let mut f = disc(64, 40, 40, 15, 180);
        // a small bright blob in the corner, disconnected from the disc
        let mut px = f.pixels().to_vec();
        for y in 0..4 {
            for x in 0..4 {
                px[y * 64 + x] = 255;
            }
        }
        f = Frame::new(64, 64, Channels::Gray, px, 0.0).unwrap();
        let fg: Vec<bool> = f.luma().iter().map(|&v| v > CROP_THRESHOLD).collect();
        let comp = largest_component(64, 64, &fg).unwrap();
        assert_eq!((comp.x0, comp.y0), (25, 25));
        assert!(!comp.mask[0]);
    }

    #[test]
    fn diagonal_pixels_are_not_connected() {
        // two pixels touching only at a corner form two components
        let fg = [true, false, false, true];
        let comp = largest_component(2, 2, &fg).unwrap();
        assert_eq!(comp.area, 1);
        assert_eq!((comp.x0, comp.y0), (0, 0));
    }

    #[test]
    fn resize_constant_stays_constant() {
        let src = vec![77u8; 5 * 3 * 3];
        let out = resize_bilinear(&src, 5, 3, 3, 11, 8);
        assert!(out.iter().all(|&v| v == 77));
    }
}
