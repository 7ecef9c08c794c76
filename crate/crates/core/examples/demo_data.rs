//! Writes the synthetic price histories under `demo/prices/`.
//!
//! Returns are drawn from a seeded Gaussian, then centered and whitened so
//! the fitted daily covariance equals the target exactly. The target makes
//! the 0.2/0.7/0.1 portfolio over ISP, IGV and G have a 0.1% VaR of 0.0804,
//! and adding 10000 on ENI to the 30000 book brings it to 0.0663.
//!
//!     cargo run -p levmargin-core --example demo_data -- demo/prices

use std::fs;
use std::path::PathBuf;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use levmargin_core::risk::TailLevel;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const RETURNS: usize = 750;
const ASSETS: [&str; 4] = ["ISP", "IGV", "G", "ENI"];
const LAST_CLOSE: [f64; 4] = [2.71, 0.85, 14.62, 13.05];

fn target_covariance() -> DMatrix<f64> {
    let q = TailLevel::new(0.001).unwrap().z();
    let vols = DVector::from_vec(vec![0.024f64, 0.035, 0.016]);
    let corr = DMatrix::from_row_slice(3, 3, &[1.0, 0.45, 0.6, 0.45, 1.0, 0.35, 0.6, 0.35, 1.0]);
    let base = DMatrix::from_diagonal(&vols) * corr * DMatrix::from_diagonal(&vols);
    let x = DVector::from_vec(vec![0.2f64, 0.7, 0.1]);
    let sd: f64 = x.dot(&(&base * &x)).sqrt();
    let s3 = base * (0.0804 / q / sd).powi(2);

    // ENI loads on the book's return with beta b plus independent noise,
    // solving VaR(0.75 R_P + 0.25 R_4) = 0.0663 and VaR(2/3 R_P + 1/3 R_4)
    // = 0.2 * 0.2378 / 0.7622 in squared-VaR units.
    let var_p2 = 0.0804f64.powi(2);
    let v10 = 0.0663f64.powi(2);
    let v15 = (0.2 * 0.2378 / (1.0 - 0.2378f64)).powi(2);
    let (a1, b1, c1) = (0.375, 0.0625, v10 - 0.5625 * var_p2);
    let (a2, b2, c2) = (4.0 / 9.0, 1.0 / 9.0, v15 - 4.0 / 9.0 * var_p2);
    let det = a1 * b2 - a2 * b1;
    let cov = (c1 * b2 - c2 * b1) / det;
    let var4 = (a1 * c2 - a2 * c1) / det;
    let beta = cov / var_p2;

    let mut s = DMatrix::zeros(4, 4);
    s.view_mut((0, 0), (3, 3)).copy_from(&s3);
    let load = &s3 * &x * beta;
    for k in 0..3 {
        s[(k, 3)] = load[k];
        s[(3, k)] = load[k];
    }
    s[(3, 3)] = var4 / (q * q);
    s
}

fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "demo/prices".into()));
    fs::create_dir_all(&dir).expect("create output directory");

    let target = target_covariance();
    let n = ASSETS.len();
    let mut rng = ChaCha8Rng::seed_from_u64(20150102);
    let mut z = DMatrix::<f64>::from_fn(RETURNS, n, |_, _| StandardNormal.sample(&mut rng));
    for j in 0..n {
        let mean = z.column(j).mean();
        z.column_mut(j).add_scalar_mut(-mean);
    }
    let sample_cov = z.transpose() * &z / (RETURNS - 1) as f64;
    let l_sample = sample_cov.cholesky().expect("sample covariance").l();
    let l_target = target.clone().cholesky().expect("target covariance").l();
    let whitening = l_sample.try_inverse().expect("invertible factor").transpose();
    let returns = z * whitening * l_target.transpose();

    let dates = business_days(NaiveDate::from_ymd_opt(2012, 1, 2).unwrap(), RETURNS + 1);
    for (j, id) in ASSETS.iter().enumerate() {
        let growth: f64 = returns.column(j).iter().map(|r| 1.0 + r).product();
        let mut price = LAST_CLOSE[j] / growth;
        let mut csv = String::from("date,close\n");
        csv.push_str(&format!("{},{price:.12}\n", dates[0]));
        for (i, r) in returns.column(j).iter().enumerate() {
            price *= 1.0 + r;
            csv.push_str(&format!("{},{price:.12}\n", dates[i + 1]));
        }
        fs::write(dir.join(format!("{id}.csv")), csv).expect("write prices");
    }
    println!("wrote {} series of {} closes to {}", n, RETURNS + 1, dir.display());
}
