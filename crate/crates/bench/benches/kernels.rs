use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use latvar::correlation::{correlate, polychoric, MethodChoice};
use latvar::efa::{fit_minres, rotate_oblimin, MinresOptions, RotationOptions};
use latvar::ingest::to_numeric;
use latvar::search::{enumerate_structures, EnumerationRule};
use latvar::sem::{self, FitOptions, Identification, SemModel};
use latvar::synth::{generate, reference_four_factor};

const CFA4: &str = include_str!("../../../models/cfa4.txt");

fn kernels(c: &mut Criterion) {
    let x = to_numeric(&generate(&reference_four_factor(5000, 3)).unwrap());
    let (a, b) = (&x.columns[0], &x.columns[4]);
    c.bench_function("polychoric pair, n=5000", |bch| {
        bch.iter(|| polychoric(black_box(a), black_box(b)).unwrap())
    });

    let r = correlate(&x, MethodChoice::Pearson, 6).unwrap().r;
    c.bench_function("minres + quartimin, 13 items, 4 factors", |bch| {
        bch.iter(|| {
            let ext = fit_minres(black_box(&r), 4, &MinresOptions::default()).unwrap();
            rotate_oblimin(&ext.loadings, &RotationOptions::default()).ok()
        })
    });

    let mut cont = reference_four_factor(5000, 4);
    cont.thresholds = None;
    let xc = to_numeric(&generate(&cont).unwrap());
    let model = SemModel::parse(CFA4, Identification::Marker).unwrap();
    let opts = FitOptions {
        standard_errors: false,
        residuals: false,
        ..FitOptions::default()
    };
    c.bench_function("ML fit, four-factor CFA", |bch| {
        bch.iter(|| sem::fit_ml(black_box(&model), &xc, &opts).unwrap())
    });

    let names: Vec<String> = (1..=4).map(|k| format!("MR{k}")).collect();
    c.bench_function("enumerate structures, 4 factors", |bch| {
        bch.iter(|| enumerate_structures(black_box(&names), &EnumerationRule::default()).unwrap())
    });
}

criterion_group!(benches, kernels);
criterion_main!(benches);
