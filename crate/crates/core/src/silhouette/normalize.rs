use super::{BinaryImage, FrameStatus, SilhouetteFrame, FRAME_HEIGHT, FRAME_PIXELS, FRAME_WIDTH};

/// Crops the foreground bounding box, scales it (nearest neighbour, aspect
/// preserved) to fit 150x200 with the height filled when possible, and
/// places it so the foreground centroid sits on the centre column.
///
/// An all-background input yields an all-background frame.
pub fn normalize_frame(raw: &BinaryImage) -> SilhouetteFrame {
    let (h, w) = (raw.height(), raw.width());
    let (mut top, mut bottom, mut left, mut right) = (usize::MAX, 0, usize::MAX, 0);
    for y in 0..h {
        for x in 0..w {
            if raw.get(y, x) == 1 {
                top = top.min(y);
                bottom = bottom.max(y);
                left = left.min(x);
                right = right.max(x);
            }
        }
    }
    if top == usize::MAX {
        return SilhouetteFrame::blank(FrameStatus::Observed);
    }
    let (bh, bw) = (bottom - top + 1, right - left + 1);
    let scale = (FRAME_HEIGHT as f64 / bh as f64).min(FRAME_WIDTH as f64 / bw as f64);
    let out_h = ((bh as f64 * scale).round() as usize).clamp(1, FRAME_HEIGHT);
    let out_w = ((bw as f64 * scale).round() as usize).clamp(1, FRAME_WIDTH);

    let mut patch = vec![0u8; out_h * out_w];
    let (mut mass, mut col_sum) = (0usize, 0usize);
    for y in 0..out_h {
        let sy = top + (((y as f64 + 0.5) / scale) as usize).min(bh - 1);
        for x in 0..out_w {
            let sx = left + (((x as f64 + 0.5) / scale) as usize).min(bw - 1);
            let v = raw.get(sy, sx);
            patch[y * out_w + x] = v;
            mass += v as usize;
            col_sum += x * v as usize;
        }
    }
    let mut pixels = vec![0u8; FRAME_PIXELS];
    if mass == 0 {
        return SilhouetteFrame::new(pixels, FrameStatus::Observed).expect("valid frame");
    }
    let centroid = col_sum as f64 / mass as f64;
    let offset = ((FRAME_WIDTH / 2) as f64 - centroid).round() as isize;
    let y0 = (FRAME_HEIGHT - out_h) / 2;
    for y in 0..out_h {
        for x in 0..out_w {
            let tx = x as isize + offset;
            if (0..FRAME_WIDTH as isize).contains(&tx) {
                pixels[(y0 + y) * FRAME_WIDTH + tx as usize] = patch[y * out_w + x];
            }
        }
    }
    SilhouetteFrame::new(pixels, FrameStatus::Observed).expect("valid frame")
}

/// Mean column of the foreground, if any.
pub fn centroid_column(frame: &SilhouetteFrame) -> Option<f64> {
    let (mut mass, mut sum) = (0usize, 0usize);
    for (i, &p) in frame.pixels().iter().enumerate() {
        if p == 1 {
            mass += 1;
            sum += i % FRAME_WIDTH;
        }
    }
    (mass > 0).then(|| sum as f64 / mass as f64)
}
