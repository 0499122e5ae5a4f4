use ttst::cdr::{boundary_value_function, SpaceTimeGrid, TimeScheme};
use ttst::cross::{tt_cross, CrossConfig};
use ttst::reference::ManufacturedCase;

fn main() {
    let case = ManufacturedCase::by_name("test3").unwrap();
    for n in [8, 12, 16, 20] {
        let grid = SpaceTimeGrid::new(n, case.problem.domain, 1.0, TimeScheme::Spectral).unwrap();
        let f = boundary_value_function(&case.problem, &grid);
        for sweeps in [1, 2, 4, 8, 16, 30] {
            let cfg = CrossConfig { max_sweeps: sweeps, ..CrossConfig::default() };
            match tt_cross(&f, &cfg) {
                Ok(r) => println!(
                    "n={n} sweeps={sweeps}: conv={} est={:.3e} ranks={:?}",
                    r.converged, r.est_rel_error, r.tt.ranks()
                ),
                Err(e) => println!("n={n} sweeps={sweeps}: error {e}"),
            }
        }
    }
}
