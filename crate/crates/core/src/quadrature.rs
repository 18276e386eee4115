//! Composite Newton-Cotes weights on uniform nodes.

/// Weights for `int_a^b f` from `nodes` equally spaced samples including both ends.
///
/// Even interval counts use composite Simpson. Odd counts use Simpson on the
/// leading intervals and the 3/8 rule on the last three, so the rule stays
/// fourth order. Two nodes fall back to the trapezoid rule.
pub fn simpson_weights(nodes: usize, a: f64, b: f64) -> Vec<f64> {
    assert!(nodes >= 2, "need at least two quadrature nodes");
    let intervals = nodes - 1;
    let h = (b - a) / intervals as f64;
    let mut w = vec![0.0; nodes];
    if intervals == 1 {
        w[0] = h / 2.0;
        w[1] = h / 2.0;
        return w;
    }
    let simpson_end = if intervals.is_multiple_of(2) { intervals } else { intervals - 3 };
    for i in (0..simpson_end).step_by(2) {
        w[i] += h / 3.0;
        w[i + 1] += 4.0 * h / 3.0;
        w[i + 2] += h / 3.0;
    }
    if simpson_end < intervals {
        let i = simpson_end;
        w[i] += 3.0 * h / 8.0;
        w[i + 1] += 9.0 * h / 8.0;
        w[i + 2] += 9.0 * h / 8.0;
        w[i + 3] += 3.0 * h / 8.0;
    }
    w
}

/// Row `j` holds weights for `int_{t_0}^{t_j} f` over uniform nodes with spacing `h`.
///
/// All rows are fourth order; the first interval uses the cubic through the
/// first four nodes. Requires at least four nodes.
pub fn cumulative_weights(nodes: usize, h: f64) -> Vec<Vec<f64>> {
    assert!(nodes >= 4, "cumulative weights need at least four nodes");
    let mut rows = Vec::with_capacity(nodes);
    rows.push(vec![0.0; nodes]);
    let mut first = vec![0.0; nodes];
    first[0] = 9.0 * h / 24.0;
    first[1] = 19.0 * h / 24.0;
    first[2] = -5.0 * h / 24.0;
    first[3] = h / 24.0;
    rows.push(first);
    for j in 2..nodes {
        let mut row = vec![0.0; nodes];
        let w = simpson_weights(j + 1, 0.0, j as f64 * h);
        row[..=j].copy_from_slice(&w);
        rows.push(row);
    }
    rows
}

/// Cubic Lagrange interpolation of uniform samples `values[k] = f(t0 + k h)`.
pub fn lagrange4<T>(t0: f64, h: f64, values: &[T], t: f64) -> T
where
    T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
{
    let n = values.len();
    assert!(n >= 4, "cubic interpolation needs four samples");
    let pos = (t - t0) / h;
    let start = (pos.floor() as isize - 1).clamp(0, n as isize - 4) as usize;
    let mut acc: Option<T> = None;
    for i in 0..4 {
        let xi = (start + i) as f64;
        let mut basis = 1.0;
        for j in 0..4 {
            if i != j {
                let xj = (start + j) as f64;
                basis *= (pos - xj) / (xi - xj);
            }
        }
        let term = values[start + i] * basis;
        acc = Some(match acc {
            Some(a) => a + term,
            None => term,
        });
    }
    acc.expect("four terms")
}
