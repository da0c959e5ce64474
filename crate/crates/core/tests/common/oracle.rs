//! Straightforward reference metrics: a direct 2-D window sum instead of the
//! library's separable filter, and plain per-pixel loops.

use brushedit::image::Image;
use brushedit::mask::Mask;

fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    while i < 0 || i >= n {
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * (n - 1) - i;
        }
    }
    i as usize
}

fn kernel2d() -> [[f64; 11]; 11] {
    let mut k = [[0.0; 11]; 11];
    let mut total = 0.0;
    for (dy, row) in k.iter_mut().enumerate() {
        for (dx, v) in row.iter_mut().enumerate() {
            let (y, x) = (dy as f64 - 5.0, dx as f64 - 5.0);
            *v = (-(y * y + x * x) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    for row in k.iter_mut() {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    k
}

fn keep(region: Option<&Mask>, y: usize, x: usize) -> bool {
    region.is_none_or(|m| m.get(y, x) <= 0.5)
}

pub fn mse(a: &Image, b: &Image, region: Option<&Mask>) -> f64 {
    let (h, w) = a.dims();
    let (mut acc, mut n) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if keep(region, y, x) {
                let (pa, pb) = (a.pixel(y, x), b.pixel(y, x));
                for c in 0..3 {
                    acc += (pa[c] - pb[c]).powi(2);
                    n += 1.0;
                }
            }
        }
    }
    acc / n
}

pub fn psnr(a: &Image, b: &Image, region: Option<&Mask>) -> f64 {
    let m = mse(a, b, region);
    if m == 0.0 {
        99.0
    } else {
        -10.0 * m.log10()
    }
}

pub fn ssim(a: &Image, b: &Image, region: Option<&Mask>) -> f64 {
    let (h, w) = a.dims();
    let k = kernel2d();
    let val = |img: &Image, y: usize, x: usize, c: usize| if keep(region, y, x) { img.pixel(y, x)[c] } else { 0.0 };
    let (c1, c2) = (1e-4, 9e-4);
    let mut total = 0.0;
    for c in 0..3 {
        let (mut sum, mut n) = (0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                if !keep(region, y, x) {
                    continue;
                }
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (dy, row) in k.iter().enumerate() {
                    for (dx, kv) in row.iter().enumerate() {
                        let yy = mirror(y as isize + dy as isize - 5, h);
                        let xx = mirror(x as isize + dx as isize - 5, w);
                        let (va, vb) = (val(a, yy, xx, c), val(b, yy, xx, c));
                        ma += kv * va;
                        mb += kv * vb;
                        saa += kv * va * va;
                        sbb += kv * vb * vb;
                        sab += kv * va * vb;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                sum += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                n += 1.0;
            }
        }
        total += sum / n;
    }
    total / 3.0
}
