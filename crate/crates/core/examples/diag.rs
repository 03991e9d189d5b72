use opequiv::orbit::*;
use opequiv::sampling::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
fn main() {
    for seed in 0..4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_well_conditioned_symbol(&mut rng, 2, 2);
        let d = random_symbol(&mut rng, 2, 2);
        for e in [1e-10, 1e-9, 3e-9, 1e-8, 3e-8, 1e-7, 3e-7, 1e-6] {
            let t = s.add(&d.scale(e * s.norm() / d.norm()));
            let r = symbols_equivalent(&s, &t, 1e-9, &OrbitConfig::default()).unwrap();
            println!(
                "{seed} {e:e} {:?} {:?} {:?} res {:.1e} null {}",
                r.verdict,
                r.separation,
                r.conjugacy.verdict,
                r.conjugacy.residual,
                r.conjugacy.null_dim
            );
        }
    }
}
