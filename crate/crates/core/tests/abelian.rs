use std::collections::BTreeSet;

use idla::cluster::{grow_in_order, grow_interleaved, grow_sequential, three_wave_build, Cluster, ParticleConfig};
use idla::geometry::{Radius, Site};
use idla::walk::{InstructionStacks, RngStream};
use proptest::prelude::*;

fn connected(sites: &BTreeSet<Site>) -> bool {
    let Some(&first) = sites.iter().next() else {
        return true;
    };
    let mut seen = BTreeSet::from([first]);
    let mut stack = vec![first];
    while let Some(s) = stack.pop() {
        for n in s.neighbors() {
            if sites.contains(&n) && seen.insert(n) {
                stack.push(n);
            }
        }
    }
    seen.len() == sites.len()
}

fn starts_strategy(dim: usize) -> impl Strategy<Value = Vec<Site>> {
    prop::collection::vec(prop::collection::vec(-3i32..=3, dim), 1..60)
        .prop_map(|v| v.iter().map(|c| Site::new(c).unwrap()).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn launch_order_does_not_matter(
        dim in 2usize..=3,
        seed in any::<u64>(),
        shuffle_seed in any::<u64>(),
        raw in prop::collection::vec(prop::collection::vec(-3i32..=3, 3), 1..60),
    ) {
        let starts: Vec<Site> = raw.iter().map(|c| Site::new(&c[..dim]).unwrap()).collect();
        let mut reference = Cluster::new(dim).unwrap();
        grow_in_order(&mut reference, &starts, &mut InstructionStacks::new(seed)).unwrap();

        let mut rng = RngStream::new(shuffle_seed, 0);
        let mut order = starts.clone();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.below(i as u64 + 1) as usize);
        }
        let mut permuted = Cluster::new(dim).unwrap();
        grow_in_order(&mut permuted, &order, &mut InstructionStacks::new(seed)).unwrap();
        prop_assert_eq!(permuted.sites(), reference.sites());

        let mut interleaved = Cluster::new_sparse(dim).unwrap();
        grow_interleaved(&mut interleaved, &order, &mut InstructionStacks::new(seed), &mut rng, 5).unwrap();
        prop_assert_eq!(interleaved.sites(), reference.sites());
    }

    #[test]
    fn three_waves_equal_one_shot(
        n in 0u64..150,
        m in 0u64..150,
        radius in 1.0f64..9.0,
        seed in any::<u64>(),
    ) {
        let mut one_shot = Cluster::new(2).unwrap();
        let all = ParticleConfig::point(Site::origin(2), n + m);
        grow_sequential(&mut one_shot, &all, &mut InstructionStacks::new(seed)).unwrap();
        let waved = three_wave_build(2, n, m, Radius::new(radius).unwrap(), &mut InstructionStacks::new(seed)).unwrap();
        prop_assert_eq!(waved.len(), n + m);
        prop_assert_eq!(waved.sites(), one_shot.sites());
    }

    #[test]
    fn growth_is_monotone_and_conserves(dim in 2usize..=4, count in 1u64..300, seed in any::<u64>()) {
        let mut cluster = Cluster::new(dim).unwrap();
        let mut rng = RngStream::new(seed, 0);
        let mut previous = BTreeSet::new();
        for _ in 0..count {
            cluster.grow_from(Site::origin(dim), &mut rng).unwrap();
            let now = cluster.site_set();
            prop_assert!(previous.is_subset(&now));
            prop_assert_eq!(now.len(), previous.len() + 1);
            previous = now;
        }
        prop_assert_eq!(cluster.particle_count(), count);
        prop_assert!(previous.contains(&Site::origin(dim)));
        prop_assert!(connected(&previous));
    }

    #[test]
    fn initial_region_is_kept(starts in starts_strategy(2), seed in any::<u64>()) {
        let initial: Vec<Site> = (-2..=2).map(|x| Site::from([x, 0])).collect();
        let mut cluster = Cluster::from_sites(2, initial.clone()).unwrap();
        grow_in_order(&mut cluster, &starts, &mut RngStream::new(seed, 0)).unwrap();
        prop_assert_eq!(cluster.particle_count(), cluster.len() - initial.len() as u64);
        let sites = cluster.site_set();
        prop_assert!(initial.iter().all(|s| sites.contains(s)));
    }
}
