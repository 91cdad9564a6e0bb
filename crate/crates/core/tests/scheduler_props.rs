mod common;

use common::*;
use limbnet::qos::SchedulerPolicy;
use num_traits::Zero;
use proptest::prelude::*;

proptest! {
    #[test]
    fn strict_priority_never_inverts(set in job_set()) {
        let run = run_jobs(SchedulerPolicy::strict(), &set);
        prop_assert_eq!(check_non_inversion(&run), Ok(()));
    }

    #[test]
    fn strict_priority_conserves_work(set in job_set(), preemptive in any::<bool>()) {
        let mut policy = SchedulerPolicy::strict();
        policy.preemptive = preemptive;
        let run = run_jobs(policy, &set);
        prop_assert_eq!(check_work_conservation(&run), Ok(()));
    }

    #[test]
    fn sliced_share_meets_reservations(set in job_set(), slices in slices()) {
        let run = run_jobs(SchedulerPolicy::sliced(slices.clone()), &set);
        prop_assert_eq!(check_work_conservation(&run), Ok(()));
        prop_assert_eq!(check_slice_guarantee(&run, &slices, &limbnet::qos::Q::zero()), Ok(()));
    }
}

#[test]
fn non_preemptive_finishes_started_job_first() {
    // rank 3 starts at 0 and runs 10 ms; rank 0 arrives at 1 ms and waits.
    let set = JobSet { rate: 100, jobs: vec![(0, 3, 1000), (1, 0, 100)] };
    let mut policy = SchedulerPolicy::strict();
    policy.preemptive = false;
    let run = run_jobs(policy, &set);
    let first = &run.completions[0];
    assert_eq!(first.job.priority.rank, 3);
    assert_eq!(first.finish_time, qi(10));
    assert_eq!(run.completions[1].finish_time, qi(11));
    // The same set under preemption inverts the order.
    let run = run_jobs(SchedulerPolicy::strict(), &set);
    assert_eq!(run.completions[0].job.priority.rank, 0);
    assert_eq!(run.completions[0].finish_time, qi(2));
}
