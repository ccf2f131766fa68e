use serde::{Deserialize, Serialize};

/// Slack allowed on the right/bottom frame edge for detector rounding.
pub const EDGE_TOLERANCE: f64 = 1e-6;

/// Axis-aligned box in frame-relative coordinates, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    /// Builds a box, returning a description of the first violated invariant.
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, String> {
        let b = Self { x, y, w, h };
        match b.violation() {
            Some(msg) => Err(msg),
            None => Ok(b),
        }
    }

    pub fn violation(&self) -> Option<String> {
        let Self { x, y, w, h } = *self;
        if ![x, y, w, h].iter().all(|v| v.is_finite()) {
            return Some(format!("bbox [{x}, {y}, {w}, {h}] has a non-finite coordinate"));
        }
        if x < 0.0 || y < 0.0 {
            return Some(format!("bbox origin ({x}, {y}) is negative"));
        }
        if w <= 0.0 || h <= 0.0 {
            return Some(format!("bbox size ({w}, {h}) must be strictly positive"));
        }
        if x + w > 1.0 + EDGE_TOLERANCE || y + h > 1.0 + EDGE_TOLERANCE {
            return Some(format!("bbox [{x}, {y}, {w}, {h}] extends past the frame"));
        }
        None
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }
}

/// Intersection over union of two boxes; 0 when they do not overlap.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let ih = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn identical_boxes() {
        let a = bx(0.0, 0.0, 0.5, 0.5);
        assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn disjoint_boxes() {
        assert_eq!(iou(&bx(0.0, 0.0, 0.1, 0.1), &bx(0.5, 0.5, 0.1, 0.1)), 0.0);
    }

    #[test]
    fn touching_edges_do_not_overlap() {
        assert_eq!(iou(&bx(0.0, 0.0, 0.5, 0.5), &bx(0.5, 0.0, 0.5, 0.5)), 0.0);
    }

    #[test]
    fn shifted_box() {
        let v = iou(&bx(0.0, 0.0, 0.5, 0.5), &bx(0.1, 0.0, 0.5, 0.5));
        assert!((v - 0.2 / 0.3).abs() < 1e-12);
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(BBox::new(0.1, 0.1, 0.0, 0.2).is_err());
        assert!(BBox::new(0.1, 0.1, 0.2, -0.1).is_err());
        assert!(BBox::new(-0.01, 0.1, 0.2, 0.2).is_err());
        assert!(BBox::new(0.9, 0.1, 0.2, 0.2).is_err());
        assert!(BBox::new(0.5, 0.5, 0.5 + 5e-7, 0.5).is_ok());
        assert!(BBox::new(f64::NAN, 0.0, 0.1, 0.1).is_err());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..0.9f64, 0.0..0.9f64, 0.01..1.0f64, 0.01..1.0f64).prop_map(|(x, y, fw, fh)| {
            let w = (1.0 - x) * fw;
            let h = (1.0 - y) * fh;
            BBox { x, y, w, h }
        })
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        }
    }
}
