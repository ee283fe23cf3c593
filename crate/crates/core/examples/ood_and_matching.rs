//! The numerical solvers on small problems: assignment, transport and the
//! nearest-neighbor OOD score.

use isodict::interventions::ood_score;
use isodict::solvers::{euclidean_cost, hungarian_match, solve_ot};
use isodict::rng::SeedStream;
use ndarray::{array, Array1, Array2};
use rand_distr::{Distribution, StandardNormal};

fn main() -> isodict::Result<()> {
    let score = array![[0.9, 0.1, 0.3], [0.8, 0.7, 0.2], [0.1, 0.6, 0.5]];
    println!("assignment {:?}", hungarian_match(score.view())?);

    let x = array![[0.0, 0.0], [1.0, 0.0]];
    let y = array![[0.0, 1.0], [1.0, 1.0], [2.0, 1.0]];
    let a = Array1::from_elem(2, 0.5);
    let b = Array1::from_elem(3, 1.0 / 3.0);
    let plan = solve_ot(euclidean_cost(x.view(), y.view()).view(), a.view(), b.view())?;
    println!("transport cost {:.4}\n{:.3}", plan.cost, plan.gamma);

    let mut rng = SeedStream::new(0).rng("clouds", 0);
    let mut cloud = |shift: f64| Array2::from_shape_fn((500, 2), |_| StandardNormal.sample(&mut rng)) + shift;
    let reference = cloud(0.0);
    for shift in [0.0, 0.5, 2.0, 10.0] {
        println!("ood shift {shift:>4}: {:.3}", ood_score(cloud(shift).view(), reference.view(), 10)?);
    }
    Ok(())
}
