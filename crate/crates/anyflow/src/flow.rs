//! Dense 2D flow fields in output-pixel units.

use anyflow_tensor::TensorData;

/// A per-pixel displacement field. Storage is planar: all `u` (horizontal)
/// components row-major, then all `v` (vertical) components, matching the
/// `[2, H, W]` tensor layout used by the model.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        FlowField { height, width, data: vec![0.0; 2 * height * width] }
    }

    /// Builds from planar data (`u` plane then `v` plane).
    pub fn from_planar(height: usize, width: usize, data: Vec<f32>) -> Option<Self> {
        (data.len() == 2 * height * width).then_some(FlowField { height, width, data })
    }

    /// Evaluates `f(x, y) -> (u, v)` at every pixel center.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(f64, f64) -> (f64, f64)) -> Self {
        let hw = height * width;
        let mut data = vec![0.0f32; 2 * hw];
        for y in 0..height {
            for x in 0..width {
                let (u, v) = f(x as f64, y as f64);
                data[y * width + x] = u as f32;
                data[hw + y * width + x] = v as f32;
            }
        }
        FlowField { height, width, data }
    }

    /// Extracts sample `n` of an `N x 2 x H x W` tensor.
    pub fn from_tensor(t: &TensorData<f32>, n: usize) -> Option<Self> {
        let s = t.shape();
        if s.len() != 4 || s[1] != 2 || n >= s[0] {
            return None;
        }
        let (h, w) = (s[2], s[3]);
        let plane = 2 * h * w;
        let data = t.as_slice()[n * plane..(n + 1) * plane].to_vec();
        Some(FlowField { height: h, width: w, data })
    }

    /// Lays the field out as a `1 x 2 x H x W` tensor.
    pub fn to_tensor(&self) -> TensorData<f32> {
        TensorData::new(vec![1, 2, self.height, self.width], self.data.clone())
            .expect("planar buffer matches its own shape")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn u(&self) -> &[f32] {
        &self.data[..self.height * self.width]
    }

    pub fn v(&self) -> &[f32] {
        &self.data[self.height * self.width..]
    }

    pub fn get(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.data[i], self.data[self.height * self.width + i])
    }

    pub fn set(&mut self, x: usize, y: usize, u: f32, v: f32) {
        let i = y * self.width + x;
        self.data[i] = u;
        self.data[self.height * self.width + i] = v;
    }

    /// Largest displacement magnitude over the field.
    pub fn max_magnitude(&self) -> f32 {
        let hw = self.height * self.width;
        (0..hw)
            .map(|i| self.data[i].hypot(self.data[hw + i]))
            .fold(0.0f32, f32::max)
    }

    pub fn iter_uv(&self) -> impl Iterator<Item = (f32, f32)> + '_ {
        let hw = self.height * self.width;
        (0..hw).map(move |i| (self.data[i], self.data[hw + i]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planar_layout_round_trips_through_tensor() {
        let f = FlowField::from_fn(2, 3, |x, y| (x + 10.0 * y, -y));
        let t = f.to_tensor();
        assert_eq!(t.shape(), &[1, 2, 2, 3]);
        let back = FlowField::from_tensor(&t, 0).unwrap();
        assert_eq!(f, back);
        assert_eq!(f.get(2, 1), (12.0, -1.0));
    }

    #[test]
    fn max_magnitude_finds_the_largest_vector() {
        let mut f = FlowField::zeros(2, 2);
        f.set(1, 1, 3.0, -4.0);
        assert_eq!(f.max_magnitude(), 5.0);
    }
}
