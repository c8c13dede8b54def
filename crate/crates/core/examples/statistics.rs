//! The statistical building blocks on small hand-made samples.

use lesioncal::stats::{
    bh_fdr, bootstrap_means, descriptive, holm_fwer, kruskal_wallis, paired_t, spearman,
};

fn main() -> lesioncal::Result<()> {
    let groups = vec![
        vec![2.9, 3.0, 2.5, 2.6, 3.2],
        vec![3.8, 2.7, 4.0, 2.4],
        vec![2.8, 3.4, 3.7, 2.2, 2.0],
    ];
    let kw = kruskal_wallis(&groups)?;
    println!(
        "Kruskal-Wallis H {:.4}, df {}, p {:.4}",
        kw.statistic, kw.df, kw.p_value
    );

    let a = [0.81, 0.77, 0.90, 0.68, 0.85, 0.79];
    let b = [0.78, 0.75, 0.86, 0.69, 0.80, 0.74];
    let t = paired_t(&a, &b)?;
    println!(
        "paired t {:.4}, df {}, p {:.4}",
        t.statistic, t.df, t.p_value
    );

    let rho = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.9, 0.7, 0.72, 0.5, 0.3])?;
    println!("spearman rho {:.3}, p {:.4}", rho.statistic, rho.p_value);

    let p = [0.001, 0.008, 0.039, 0.041, 0.042, 0.06, 0.074, 0.205];
    let bh = bh_fdr(&p, 0.05)?;
    let holm = holm_fwer(&p, 0.05)?;
    for (i, pv) in p.iter().enumerate() {
        println!(
            "p {pv:.3}  BH {:.3} {}  Holm {:.3} {}",
            bh.adjusted[i], bh.reject[i], holm.adjusted[i], holm.reject[i]
        );
    }

    let counts = [0.0, 0.0, 3.0, 12.0, 0.0, 1.0, 40.0, 0.0];
    println!("{:?}", descriptive(&counts)?);
    let boot = bootstrap_means(&counts, 5, 8, 1)?;
    println!("bootstrap means {boot:.2?}");
    Ok(())
}
