//! Property tests for plan parsing, serialization and schedule compilation.

use formagen::form_plan::{
    compile_schedule, parse_plan, serialize_plan, validate_plan, ConditioningSchedule, FormPlan,
    Part, PlanConstraints,
};
use proptest::prelude::*;

fn arb_plan() -> impl Strategy<Value = (FormPlan, f64, f64)> {
    // Integer part lengths and frame rates keep step counts exact.
    let lengths = prop::collection::vec(5u32..=50, 1..=5);
    (lengths, 0u32..=4, prop::sample::select(vec![4.0, 10.0, 25.0]), any::<u64>()).prop_map(
        |(lengths, transition_quarter, frame_rate, ref_seed)| {
            let min_len = *lengths.iter().min().unwrap() as f64;
            let transition_s = min_len * transition_quarter as f64 / 4.0;
            let parts: Vec<Part> = lengths
                .iter()
                .enumerate()
                .map(|(i, &len)| {
                    let index = (i + 1) as u32;
                    let referenced_part = if i >= 1 && (ref_seed >> i) & 1 == 1 {
                        Some((ref_seed as u32 % i as u32) + 1)
                    } else {
                        None
                    };
                    Part {
                        index,
                        prompt: format!("part prompt {}", index),
                        length_s: len as f64,
                        referenced_part,
                    }
                })
                .collect();
            (
                FormPlan {
                    description: String::new(),
                    parts,
                },
                frame_rate,
                transition_s,
            )
        },
    )
}

fn weight_of(schedule: &ConditioningSchedule, part: u32, step: usize) -> f64 {
    schedule.steps()[step]
        .text_conditions
        .iter()
        .find(|tc| tc.part == part)
        .map(|tc| tc.weight)
        .unwrap_or(0.0)
}

proptest! {
    #[test]
    fn weights_sum_to_one_at_every_step((plan, frame_rate, transition_s) in arb_plan()) {
        let schedule = compile_schedule(&plan, frame_rate, transition_s, 15.0, 10.0).unwrap();
        for step in schedule.steps() {
            let sum: f64 = step.text_conditions.iter().map(|tc| tc.weight).sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            for tc in &step.text_conditions {
                prop_assert!(tc.weight >= 0.0);
            }
            if let Some(audio) = &step.audio_prompt {
                prop_assert!(audio.weight > 0.0 && audio.weight <= 1.0);
            }
        }
    }

    #[test]
    fn step_counts_follow_rounding_rule((plan, frame_rate, transition_s) in arb_plan()) {
        let schedule = compile_schedule(&plan, frame_rate, transition_s, 15.0, 10.0).unwrap();
        let total_expected = (plan.total_length_s() * frame_rate).round() as usize;
        prop_assert_eq!(schedule.total_steps(), total_expected);

        let spans = schedule.parts();
        let mut sum = 0usize;
        for (i, span) in spans.iter().enumerate() {
            let count = span.end - span.start;
            sum += count;
            if i + 1 < spans.len() {
                let expected = (plan.parts[i].length_s * frame_rate).round() as usize;
                prop_assert_eq!(count, expected);
            }
        }
        prop_assert_eq!(sum, total_expected);
    }

    #[test]
    fn weight_trajectories_are_continuous((plan, frame_rate, transition_s) in arb_plan()) {
        let schedule = compile_schedule(&plan, frame_rate, transition_s, 15.0, 10.0).unwrap();
        let transition_len = (transition_s * frame_rate).round() as usize;
        // Piecewise-linear continuity: per-step weight change never exceeds
        // the ramp slope.
        let max_slope = if transition_len > 0 {
            1.0 / transition_len as f64
        } else {
            1.0
        };
        for part in schedule.parts() {
            for s in 0..schedule.total_steps() - 1 {
                let delta = (weight_of(&schedule, part.part, s + 1)
                    - weight_of(&schedule, part.part, s))
                .abs();
                prop_assert!(
                    delta <= max_slope + 1e-12,
                    "part {} step {}: jump {}",
                    part.part,
                    s,
                    delta
                );
            }
        }
    }

    #[test]
    fn audio_weights_fall_linearly((plan, frame_rate, transition_s) in arb_plan()) {
        let schedule = compile_schedule(&plan, frame_rate, transition_s, 15.0, 10.0).unwrap();
        let fade_len = (10.0 * frame_rate).round() as usize;
        for span in schedule.parts() {
            if span.audio_request.is_none() {
                continue;
            }
            for s in span.start..span.end {
                let offset = s - span.start;
                match &schedule.steps()[s].audio_prompt {
                    Some(audio) => {
                        let expected = 1.0 - offset as f64 / fade_len as f64;
                        prop_assert!((audio.weight - expected).abs() <= 1e-12);
                    }
                    None => prop_assert!(offset >= fade_len),
                }
            }
        }
    }

    #[test]
    fn wire_round_trip_is_identity((plan, _fr, _tr) in arb_plan()) {
        let json = serialize_plan(&plan);
        let reparsed = parse_plan(&json).unwrap();
        prop_assert_eq!(&plan, &reparsed);
        // And the serialized form is byte-stable.
        prop_assert_eq!(json, serialize_plan(&reparsed));
    }

    #[test]
    fn generated_plans_validate((plan, _fr, _tr) in arb_plan()) {
        let constraints = PlanConstraints::for_total(plan.total_length_s());
        prop_assert!(validate_plan(&plan, &constraints).is_empty());
    }
}
