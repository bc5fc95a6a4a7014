//! Named builder descriptors for `immidx examples`.

use immidx::immersion::ImmersionSpec;

fn lifted() -> ImmersionSpec {
    ImmersionSpec::Lift {
        base: Box::new(ImmersionSpec::OneLoopCurve),
        bump: None,
    }
}

fn concat(left: ImmersionSpec, right: ImmersionSpec) -> ImmersionSpec {
    ImmersionSpec::Concat {
        left: Box::new(left),
        right: Box::new(right),
    }
}

/// `(name, description, spec)` for every example.
pub fn all() -> Vec<(&'static str, &'static str, ImmersionSpec)> {
    vec![
        (
            "trivial-1",
            "the standard line in the plane",
            ImmersionSpec::Trivial { n: 1 },
        ),
        (
            "trivial-2",
            "the standard plane in R^4",
            ImmersionSpec::Trivial { n: 2 },
        ),
        (
            "trivial-3",
            "the standard R^3 in R^6",
            ImmersionSpec::Trivial { n: 3 },
        ),
        (
            "one-loop",
            "plane curve with one double point",
            ImmersionSpec::OneLoopCurve,
        ),
        (
            "one-loop-mirrored",
            "one-loop curve reflected in the second coordinate",
            ImmersionSpec::Mirror {
                base: Box::new(ImmersionSpec::OneLoopCurve),
                component: 2,
            },
        ),
        (
            "lifted",
            "lift of the one-loop curve to R^2 -> R^4",
            lifted(),
        ),
        (
            "lifted-mirrored",
            "lifted example reflected in the fourth coordinate",
            ImmersionSpec::Mirror {
                base: Box::new(lifted()),
                component: 4,
            },
        ),
        (
            "lifted-twice",
            "concatenation of two lifted examples",
            concat(lifted(), lifted()),
        ),
        (
            "lifted-perturbed",
            "lifted example plus a 0.01 bump in the third coordinate",
            ImmersionSpec::Perturb {
                base: Box::new(lifted()),
                component: 3,
                amplitude: 0.01,
                center: vec![0.1, 0.2],
                radius: 0.5,
            },
        ),
    ]
}

pub fn find(name: &str) -> Option<ImmersionSpec> {
    all()
        .into_iter()
        .find(|(n, _, _)| *n == name)
        .map(|(_, _, s)| s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_example_builds() {
        for (name, _, spec) in all() {
            spec.build().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn names_are_unique() {
        let names: Vec<_> = all().into_iter().map(|(n, _, _)| n).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        assert!(find("lifted").is_some());
        assert!(find("nope").is_none());
    }
}
