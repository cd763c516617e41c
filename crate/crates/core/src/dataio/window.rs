use log::warn;

use crate::numcore::Tensor;
use crate::Scalar;

/// Sliding windows over consecutive rows.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSet<S> {
    /// Each window is `window_len × D`.
    pub windows: Vec<Tensor<S>>,
    /// Label of each window's final row.
    pub window_labels: Vec<u8>,
    /// First row of each window.
    pub starts: Vec<usize>,
    pub window_len: usize,
    pub stride: usize,
    /// Set when the input was too short to form any window.
    pub warning: Option<String>,
}

impl<S> WindowSet<S> {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }
}

/// First rows of all windows of length `window_len` taken every `stride`
/// rows from `n` rows: `floor((n - window_len) / stride) + 1` of them.
pub fn window_starts(n: usize, window_len: usize, stride: usize) -> Vec<usize> {
    if window_len == 0 || stride == 0 || n < window_len {
        return Vec::new();
    }
    (0..=n - window_len).step_by(stride).collect()
}

/// Cuts `matrix` into windows; window `i` covers rows
/// `[start_i, start_i + window_len)` and takes the label of its last row.
pub fn make_windows<S: Scalar>(matrix: &Tensor<S>, labels: &[u8], window_len: usize, stride: usize) -> WindowSet<S> {
    let n = matrix.rows();
    let starts = window_starts(n.min(labels.len()), window_len, stride);
    let warning = if starts.is_empty() {
        let msg = format!("{n} rows cannot fill a window of length {window_len}");
        warn!("{msg}");
        Some(msg)
    } else {
        None
    };
    let windows = starts
        .iter()
        .map(|&s| {
            let rows: Vec<usize> = (s..s + window_len).collect();
            matrix.gather_rows(&rows).expect("window rows are in range")
        })
        .collect();
    let window_labels = starts.iter().map(|&s| labels[s + window_len - 1]).collect();
    WindowSet {
        windows,
        window_labels,
        starts,
        window_len,
        stride,
        warning,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> (Tensor<f64>, Vec<u8>) {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64, -(i as f64)]).collect();
        let labels = (0..n).map(|i| (i % 3 == 0) as u8).collect();
        (Tensor::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn counts_and_labels() {
        let (m, l) = ramp(12);
        let w = make_windows(&m, &l, 10, 1);
        assert_eq!(w.len(), 3);
        for (i, win) in w.windows.iter().enumerate() {
            assert_eq!(win.shape(), &[10, 2]);
            assert_eq!(win.at(0, 0), i as f64);
            assert_eq!(w.window_labels[i], l[i + 9]);
        }
        assert!(w.warning.is_none());
    }

    #[test]
    fn stride_arithmetic() {
        assert_eq!(window_starts(25, 10, 4), vec![0, 4, 8, 12]);
        assert_eq!(window_starts(10, 10, 3), vec![0]);
    }

    #[test]
    fn too_short_gives_warning() {
        let (m, l) = ramp(9);
        let w = make_windows(&m, &l, 10, 1);
        assert!(w.is_empty());
        assert!(w.warning.is_some());
    }
}
