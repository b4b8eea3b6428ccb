use pgn::data::gen_object_dataset;
use pgn::probe::{r2_score, ridge_fit_validated, ridge_predict, Matrix, ALPHA_GRID};

fn main() {
    let (tr, va, te) = gen_object_dataset(1000, 200, 200, 6, 32, 32, 7).unwrap();
    let feat = |ds: &pgn::data::VideoDataset| -> Matrix {
        // concatenated pixels of frames 0 and 4
        let d = 2 * ds.frame_len();
        let mut data = Vec::with_capacity(ds.n_seq * d);
        for s in 0..ds.n_seq {
            for t in [0usize, 4] {
                data.extend(ds.frame(s, t).iter().map(|&v| v as f64));
            }
        }
        Matrix::new(ds.n_seq, d, data).unwrap()
    };
    let (xt, xv, xe) = (feat(&tr), feat(&va), feat(&te));
    for (i, name) in ["theta0", "omega", "z1", "z2", "z3", "z4"].iter().enumerate() {
        let y = |ds: &pgn::data::VideoDataset| -> Vec<f64> {
            ds.latents.as_ref().unwrap().iter().map(|r| r.as_vec()[i]).collect()
        };
        let (coef, alpha) =
            ridge_fit_validated(&xt, &y(&tr), &xv, &y(&va), &ALPHA_GRID).unwrap();
        let pred = ridge_predict(&coef, &xe);
        let r2 = r2_score(&y(&te), &pred).unwrap();
        println!("{name}: pixel-ridge r2 {r2:.4} (alpha {alpha})");
    }
}
