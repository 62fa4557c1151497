//! The built-in program library. Program ids on the wire index into
//! [`LIBRARY_NAMES`].

use super::primitives::*;
use super::program::{firework_program, BehaviorPhase, BehaviorProgram, FireworkParams, Primitive};

pub const LIBRARY_NAMES: [&str; 12] = [
    "firework",
    "gather",
    "scatter",
    "flock",
    "crystal",
    "pursuit",
    "orbit",
    "breathe",
    "murmuration",
    "implode",
    "repel",
    "still",
];

fn phase(duration: f64, primitive: Primitive) -> BehaviorPhase {
    BehaviorPhase {
        duration,
        primitive,
    }
}

fn program(name: &str, looping: bool, phases: Vec<BehaviorPhase>) -> BehaviorProgram {
    BehaviorProgram {
        name: name.into(),
        looping,
        phases,
    }
}

pub fn library_program(name: &str) -> Option<BehaviorProgram> {
    let inf = f64::INFINITY;
    let gather = Primitive::Aggregate(AggregateParams {
        gain: 0.4,
        stop_radius: 0.3,
        speed_limit: Some(0.5),
        require_marker: false,
    });
    let scatter = Primitive::Diffuse(DiffuseParams {
        gain: 0.6,
        radius: 2.5,
        repel_marker: false,
    });
    let p = match name {
        "firework" => firework_program(&FireworkParams::default()).ok()?,
        "gather" => program(name, false, vec![phase(inf, gather)]),
        "scatter" => program(name, false, vec![phase(inf, scatter)]),
        "flock" => program(
            name,
            false,
            vec![phase(inf, Primitive::Flock(FlockParams::default()))],
        ),
        "crystal" => program(
            name,
            false,
            vec![
                phase(
                    20.0,
                    Primitive::LennardJones(LennardJonesParams {
                        delta: 1.2,
                        eps: 0.5,
                        gain: 1.0,
                    }),
                ),
                phase(inf, Primitive::Still),
            ],
        ),
        "pursuit" => program(
            name,
            false,
            vec![phase(
                inf,
                Primitive::Pursuit(PursuitParams {
                    gain: 0.5,
                    tangential: 0.0,
                }),
            )],
        ),
        "orbit" => program(
            name,
            false,
            vec![phase(
                inf,
                Primitive::Pursuit(PursuitParams {
                    gain: 0.3,
                    tangential: 0.4,
                }),
            )],
        ),
        "breathe" => program(
            name,
            true,
            vec![
                phase(
                    6.0,
                    Primitive::Aggregate(AggregateParams {
                        gain: 0.3,
                        stop_radius: 0.5,
                        speed_limit: Some(0.4),
                        require_marker: false,
                    }),
                ),
                phase(6.0, scatter),
            ],
        ),
        "murmuration" => program(
            name,
            true,
            vec![
                phase(10.0, Primitive::Flock(FlockParams::default())),
                phase(
                    4.0,
                    Primitive::Diffuse(DiffuseParams {
                        gain: 0.8,
                        radius: 1.5,
                        repel_marker: false,
                    }),
                ),
            ],
        ),
        "implode" => program(
            name,
            false,
            vec![
                phase(5.0, scatter),
                phase(
                    inf,
                    Primitive::Aggregate(AggregateParams {
                        gain: 0.6,
                        stop_radius: 0.4,
                        speed_limit: None,
                        require_marker: true,
                    }),
                ),
            ],
        ),
        "repel" => program(
            name,
            false,
            vec![phase(
                inf,
                Primitive::Diffuse(DiffuseParams {
                    gain: 0.5,
                    radius: 3.0,
                    repel_marker: true,
                }),
            )],
        ),
        "still" => program(name, false, vec![phase(inf, Primitive::Still)]),
        _ => return None,
    };
    Some(p)
}

/// All library programs in id order.
pub fn library() -> Vec<BehaviorProgram> {
    LIBRARY_NAMES
        .iter()
        .map(|n| library_program(n).expect("library names are exhaustive"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_valid_programs() {
        let lib = library();
        assert_eq!(lib.len(), 12);
        for (p, name) in lib.iter().zip(LIBRARY_NAMES) {
            assert_eq!(p.name, name);
            p.validate().unwrap();
            let text = p.to_toml_string().unwrap();
            assert_eq!(&BehaviorProgram::from_toml_str(&text).unwrap(), p);
        }
        assert!(library_program("nope").is_none());
    }
}
