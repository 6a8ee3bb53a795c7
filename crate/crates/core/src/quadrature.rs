//! Composite quadrature on the (possibly non-uniform) fine grid.
//!
//! Each coarse interval is cut at input discontinuities; every smooth piece
//! gets composite Simpson weights, with a one-sided quadratic correction for
//! an odd trailing segment.

use alloc::vec::Vec;

/// Quadrature node: fine-grid index, weight, and whether the left limit of
/// the input should be used there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Node {
    pub index: usize,
    pub weight: f64,
    pub left: bool,
}

fn push(nodes: &mut Vec<Node>, index: usize, weight: f64, left: bool) {
    if let Some(last) = nodes
        .iter_mut()
        .rev()
        .take(3)
        .find(|n| n.index == index && n.left == left)
    {
        last.weight += weight;
    } else {
        nodes.push(Node {
            index,
            weight,
            left,
        });
    }
}

fn piece(times: &[f64], a: usize, b: usize, nodes: &mut Vec<Node>) {
    let segs = b - a;
    if segs == 1 {
        let h = times[b] - times[a];
        push(nodes, a, 0.5 * h, false);
        push(nodes, b, 0.5 * h, true);
        return;
    }
    let pairs = segs / 2;
    for k in 0..pairs {
        let (i0, i1, i2) = (a + 2 * k, a + 2 * k + 1, a + 2 * k + 2);
        let h0 = times[i1] - times[i0];
        let h1 = times[i2] - times[i1];
        let hs = h0 + h1;
        push(nodes, i0, hs / 6.0 * (2.0 - h1 / h0), false);
        push(nodes, i1, hs / 6.0 * hs * hs / (h0 * h1), false);
        push(nodes, i2, hs / 6.0 * (2.0 - h0 / h1), i2 == b);
    }
    if segs % 2 == 1 {
        // last segment [x1, x2] from the quadratic through x0, x1, x2
        let (i0, i1, i2) = (b - 2, b - 1, b);
        let h0 = times[i1] - times[i0];
        let h = times[i2] - times[i1];
        push(nodes, i0, -h * h * h / (6.0 * h0 * (h0 + h)), false);
        push(nodes, i1, h * (h + 3.0 * h0) / (6.0 * h0), false);
        push(nodes, i2, h * (2.0 * h + 3.0 * h0) / (6.0 * (h0 + h)), true);
    }
}

/// Nodes integrating over fine indices `[a, b]`, split at the sorted `jumps`.
pub(crate) fn interval_rule(times: &[f64], a: usize, b: usize, jumps: &[usize]) -> Vec<Node> {
    let mut nodes = Vec::with_capacity(b - a + 2);
    let mut start = a;
    for &j in jumps.iter().filter(|&&j| j > a && j < b) {
        piece(times, start, j, &mut nodes);
        start = j;
    }
    piece(times, start, b, &mut nodes);
    nodes
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integrate(
        times: &[f64],
        a: usize,
        b: usize,
        jumps: &[usize],
        f: impl Fn(f64) -> f64,
    ) -> f64 {
        interval_rule(times, a, b, jumps)
            .iter()
            .map(|n| n.weight * f(times[n.index]))
            .sum()
    }

    #[test]
    fn exact_for_cubics_on_uniform_grids() {
        let times: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
        let f = |t: f64| 3.0 * t * t * t - t + 2.0;
        let exact = 0.75 - 0.5 + 2.0;
        assert!((integrate(&times, 0, 10, &[], f) - exact).abs() < 1e-14);
    }

    #[test]
    fn odd_segment_counts_and_nonuniform_spacing() {
        let times = [0.0, 0.1, 0.25, 0.3, 0.55, 0.6, 0.8];
        let f = |t: f64| t * t - 2.0 * t;
        let exact = |t: f64| t * t * t / 3.0 - t * t;
        for b in 2..times.len() {
            let got = integrate(&times, 0, b, &[], f);
            assert!((got - exact(times[b])).abs() < 1e-14, "b = {b}");
        }
        // splitting at an interior point keeps quadratics exact
        assert!((integrate(&times, 0, 6, &[3], f) - exact(0.8)).abs() < 1e-14);
    }

    #[test]
    fn fourth_order_on_exponential() {
        let err = |k: usize| {
            let h = 1.0 / k as f64;
            let times: Vec<f64> = (0..=k).map(|i| i as f64 * h).collect();
            let got = integrate(&times, 0, k, &[], |t| libm::exp(-t));
            (got - (1.0 - libm::exp(-1.0))).abs()
        };
        assert!(err(10) < 1e-6);
        assert!(err(10) / err(20) > 14.0);
    }
}
