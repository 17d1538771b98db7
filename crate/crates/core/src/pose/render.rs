use super::{schema, PoseError, PoseFrame, FACE68};
use crate::RgbFrame;

/// Rasterization parameters for pose maps.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderStyle {
    /// Disk radius in pixels.
    pub radius: f64,
    /// Minimum confidence for a keypoint to be drawn.
    pub threshold: f64,
    /// One colour per schema group, cycled if the schema has more groups.
    pub group_colors: Vec<[f64; 3]>,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self {
            radius: 1.0,
            threshold: 0.3,
            group_colors: vec![[1.0, 1.0, 1.0], [1.0, 0.6, 0.0], [0.0, 0.8, 1.0], [0.2, 1.0, 0.2], [1.0, 0.2, 0.4]],
        }
    }
}

/// A rendered pose frame: filled keypoint disks on pure black.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseMap(pub RgbFrame);

impl PoseMap {
    pub fn frame(&self) -> &RgbFrame {
        &self.0
    }

    pub fn into_frame(self) -> RgbFrame {
        self.0
    }
}

fn color_for(style: &RenderStyle, groups: &[(usize, usize)], idx: usize) -> [f64; 3] {
    let g = groups.iter().position(|&(a, b)| (a..b).contains(&idx)).unwrap_or(0);
    if style.group_colors.is_empty() {
        [1.0; 3]
    } else {
        style.group_colors[g % style.group_colors.len()]
    }
}

/// Keypoint `(x, y)` lands on pixel `(x * width, y * height)`; every pixel
/// within `radius` of it is painted. Disks are clipped to the canvas.
pub fn render_pose_map(
    frame: &PoseFrame,
    width: usize,
    height: usize,
    style: &RenderStyle,
) -> Result<PoseMap, PoseError> {
    if width < 8 || height < 8 {
        return Err(PoseError::BadCanvas { width, height });
    }
    let groups = schema(FACE68).filter(|s| s.count == frame.len()).map(|s| s.groups).unwrap_or(&[]);
    let mut img = RgbFrame::black(width, height);
    let r = style.radius.max(0.0);
    let r2 = r * r;
    for (i, kp) in frame.keypoints().iter().enumerate() {
        if kp.confidence < style.threshold {
            continue;
        }
        let cx = kp.x * width as f64;
        let cy = kp.y * height as f64;
        let color = color_for(style, groups, i);
        let x_lo = (cx - r).ceil().max(0.0) as usize;
        let y_lo = (cy - r).ceil().max(0.0) as usize;
        let x_hi = ((cx + r).floor() as i64).min(width as i64 - 1);
        let y_hi = ((cy + r).floor() as i64).min(height as i64 - 1);
        if x_hi < 0 || y_hi < 0 {
            continue;
        }
        for y in y_lo..=y_hi as usize {
            for x in x_lo..=x_hi as usize {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                if dx * dx + dy * dy <= r2 {
                    img.set_pixel(x, y, color);
                }
            }
        }
    }
    Ok(PoseMap(img))
}
