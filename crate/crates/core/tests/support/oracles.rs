//! Independent measurement oracles over generated images.

/// O(n²) pairwise AUC with half credit for ties.
pub fn brute_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut credit = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            credit += if si > sj {
                1.0
            } else if si == sj {
                0.5
            } else {
                0.0
            };
        }
    }
    credit / pairs
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn coefficient_of_variation(v: &[f64]) -> f64 {
    let m = mean(v);
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
    var.sqrt() / m
}

fn blur3(img: &[f64], side: usize) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for y in 0..side {
        for x in 0..side {
            let (mut acc, mut n) = (0.0, 0.0);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                    if yy >= 0 && xx >= 0 && (yy as usize) < side && (xx as usize) < side {
                        acc += img[yy as usize * side + xx as usize];
                        n += 1.0;
                    }
                }
            }
            out[y * side + x] = acc / n;
        }
    }
    out
}

/// Radial distances from `center` (pixel units) to the last pixel of `mask`
/// reached along `rays` evenly spaced rays, marching in small steps.
pub fn ray_lengths(mask: &[bool], side: usize, center: (f64, f64), rays: usize) -> Vec<f64> {
    (0..rays)
        .map(|i| {
            let a = 2.0 * std::f64::consts::PI * i as f64 / rays as f64;
            let (dy, dx) = (a.sin(), a.cos());
            let mut last = 0.0;
            let mut r = 0.0;
            while r < side as f64 {
                let (y, x) = (center.0 + r * dy, center.1 + r * dx);
                if y < 0.0 || x < 0.0 || y >= side as f64 || x >= side as f64 {
                    break;
                }
                if mask[y as usize * side + x as usize] {
                    last = r;
                }
                r += 0.05;
            }
            last
        })
        .collect()
}

/// Two hand-made features of a noisy image: radial coefficient of variation
/// of the thresholded dark region relative to its moment-matched ellipse, and mean raw intensity inside it.
pub fn lesion_features(img: &[f32], side: usize) -> (f64, f64) {
    let raw: Vec<f64> = img.iter().map(|&v| v as f64).collect();
    let b = blur3(&raw, side);
    let mut border = Vec::new();
    for y in 0..side {
        for x in 0..side {
            if y < 2 || x < 2 || y >= side - 2 || x >= side - 2 {
                border.push(b[y * side + x]);
            }
        }
    }
    border.sort_by(f64::total_cmp);
    let bg = border[border.len() / 2];
    let dark = b.iter().cloned().fold(f64::INFINITY, f64::min);
    let thr = 0.5 * (bg + dark);
    let mask: Vec<bool> = b.iter().map(|&v| v < thr).collect();
    let mut pts = Vec::new();
    let mut inside = 0.0;
    for y in 0..side {
        for x in 0..side {
            if mask[y * side + x] {
                pts.push((y as f64 + 0.5, x as f64 + 0.5));
                inside += raw[y * side + x];
            }
        }
    }
    let n = pts.len() as f64;
    let cy = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let cx = pts.iter().map(|p| p.1).sum::<f64>() / n;
    // second moments of the region; a uniform ellipse with semi-axes a, b has
    // variance a²/4 and b²/4 along its axes
    let (mut syy, mut syx, mut sxx) = (0.0, 0.0, 0.0);
    for &(y, x) in &pts {
        syy += (y - cy) * (y - cy);
        syx += (y - cy) * (x - cx);
        sxx += (x - cx) * (x - cx);
    }
    let (syy, syx, sxx) = (4.0 * syy / n + 0.25, 4.0 * syx / n, 4.0 * sxx / n + 0.25);
    let det = syy * sxx - syx * syx;
    let count = 64;
    let rays = ray_lengths(&mask, side, (cy, cx), count);
    let normalised: Vec<f64> = rays
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let a = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
            let (uy, ux) = (a.sin(), a.cos());
            // uᵀ Σ⁻¹ u with Σ⁻¹ = adj(Σ) / det
            let q = (sxx * uy * uy - 2.0 * syx * uy * ux + syy * ux * ux) / det;
            (r + 0.5) * q.sqrt()
        })
        .collect();
    (coefficient_of_variation(&normalised), inside / n)
}

/// Mean of a central disk minus mean of the outer border ring. Negative when
/// a dark lesion sits near the middle of a brighter field.
pub fn center_contrast(img: &[f32], side: usize, disk: f64, ring: usize) -> f64 {
    let c = side as f64 / 2.0;
    let (mut inner, mut ni, mut outer, mut no) = (0.0, 0.0, 0.0, 0.0);
    for y in 0..side {
        for x in 0..side {
            let v = img[y * side + x] as f64;
            let d = ((y as f64 + 0.5 - c).powi(2) + (x as f64 + 0.5 - c).powi(2)).sqrt();
            if d <= disk {
                inner += v;
                ni += 1.0;
            }
            if y < ring || x < ring || y >= side - ring || x >= side - ring {
                outer += v;
                no += 1.0;
            }
        }
    }
    inner / ni - outer / no
}

/// Fisher linear discriminant on two features: returns the projection
/// direction fitted on `(features, labels)`.
pub fn fisher_direction(f: &[(f64, f64)], labels: &[u8]) -> (f64, f64) {
    let mut stats = [[0.0f64; 5]; 2];
    for (&(a, b), &l) in f.iter().zip(labels) {
        let s = &mut stats[l as usize];
        s[0] += 1.0;
        s[1] += a;
        s[2] += b;
    }
    let means: Vec<(f64, f64)> = stats.iter().map(|s| (s[1] / s[0], s[2] / s[0])).collect();
    let (mut saa, mut sab, mut sbb) = (0.0, 0.0, 0.0);
    for (&(a, b), &l) in f.iter().zip(labels) {
        let (ma, mb) = means[l as usize];
        saa += (a - ma) * (a - ma);
        sab += (a - ma) * (b - mb);
        sbb += (b - mb) * (b - mb);
    }
    let (da, db) = (means[1].0 - means[0].0, means[1].1 - means[0].1);
    let det = saa * sbb - sab * sab;
    ((sbb * da - sab * db) / det, (saa * db - sab * da) / det)
}
