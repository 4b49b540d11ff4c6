//! Hand-washing activities from hand positions, and step completion.
//!
//! Activities are axis-aligned spheroids in world space. A hand activates
//! an activity after staying inside its spheroid for three consecutive
//! frames; activations drive a step tracker that respects a precedence
//! relation between the five hand-washing steps.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::WorldPoint;
use crate::metrics::BinaryCounts;

/// Frames a hand must stay in a region before its activity is active.
pub const PERSISTENCE_FRAMES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activity {
    Away,
    Soap,
    Tap,
    Water,
    Sink,
    Towel,
}

impl Activity {
    pub const ALL: [Activity; 6] = [
        Activity::Away,
        Activity::Soap,
        Activity::Tap,
        Activity::Water,
        Activity::Sink,
        Activity::Towel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Activity::Away => "away",
            Activity::Soap => "soap",
            Activity::Tap => "tap",
            Activity::Water => "water",
            Activity::Sink => "sink",
            Activity::Towel => "towel",
        }
    }

    pub fn from_name(s: &str) -> Option<Activity> {
        Activity::ALL.into_iter().find(|a| a.name() == s)
    }
}

impl std::fmt::Display for Activity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// What the participant is doing in a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Walking,
    WashingHands,
    DryingHands,
    Turning,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Walking, Action::WashingHands, Action::DryingHands, Action::Turning];

    pub fn name(self) -> &'static str {
        match self {
            Action::Walking => "walking",
            Action::WashingHands => "washing_hands",
            Action::DryingHands => "drying_hands",
            Action::Turning => "turning",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    TurnOnWater,
    GetSoap,
    RinseHands,
    TurnOffWater,
    DryHands,
}

impl Step {
    pub const ALL: [Step; 5] = [
        Step::TurnOnWater,
        Step::GetSoap,
        Step::RinseHands,
        Step::TurnOffWater,
        Step::DryHands,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Step::TurnOnWater => "turn_on_water",
            Step::GetSoap => "get_soap",
            Step::RinseHands => "rinse_hands",
            Step::TurnOffWater => "turn_off_water",
            Step::DryHands => "dry_hands",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivityRegion {
    pub activity: Activity,
    #[serde(with = "point_array")]
    pub center: WorldPoint,
    pub radii: [f64; 3],
}

mod point_array {
    use super::WorldPoint;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(p: &WorldPoint, s: S) -> Result<S::Ok, S::Error> {
        p.to_array().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<WorldPoint, D::Error> {
        Ok(WorldPoint::from_array(<[f64; 3]>::deserialize(d)?))
    }
}

impl ActivityRegion {
    /// Squared normalized distance; the region is `<= 1`.
    pub fn normalized_distance_squared(&self, p: &WorldPoint) -> f64 {
        let d = [p.x - self.center.x, p.y - self.center.y, p.z - self.center.z];
        (0..3).map(|i| (d[i] / self.radii[i]).powi(2)).sum()
    }

    pub fn contains(&self, p: &WorldPoint) -> bool {
        self.normalized_distance_squared(p) <= 1.0
    }
}

/// Euclidean distance from `y` to the surface of the origin-centered
/// axis-aligned ellipsoid with semi-axes `e`, for `y` outside it.
fn distance_to_ellipsoid(e: [f64; 3], y: [f64; 3]) -> f64 {
    let y = y.map(f64::abs);
    let f = |t: f64| -> f64 { (0..3).map(|i| (e[i] * y[i] / (t + e[i] * e[i])).powi(2)).sum::<f64>() - 1.0 };
    let (mut lo, mut hi) = (0.0, (0..3).map(|i| (e[i] * y[i]).powi(2)).sum::<f64>().sqrt());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    (0..3)
        .map(|i| {
            let x = e[i] * e[i] * y[i] / (t + e[i] * e[i]);
            (x - y[i]).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// Whether two closed spheroids share at least one point.
pub fn regions_overlap(a: &ActivityRegion, b: &ActivityRegion) -> bool {
    // Scale space so that `a` becomes the unit sphere.
    let e = [0, 1, 2].map(|i| b.radii[i] / a.radii[i]);
    let c = [
        (b.center.x - a.center.x) / a.radii[0],
        (b.center.y - a.center.y) / a.radii[1],
        (b.center.z - a.center.z) / a.radii[2],
    ];
    let origin = c.map(|v| -v);
    let inside: f64 = (0..3).map(|i| (origin[i] / e[i]).powi(2)).sum();
    if inside <= 1.0 {
        return true;
    }
    distance_to_ellipsoid(e, origin) <= 1.0 + 1e-12
}

/// Validated, non-overlapping activity regions.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSet {
    regions: Vec<ActivityRegion>,
}

impl RegionSet {
    pub fn new(regions: Vec<ActivityRegion>) -> Result<Self> {
        for (i, r) in regions.iter().enumerate() {
            if r.activity == Activity::Away {
                return Err(Error::Config("`away` cannot have a region".into()));
            }
            if !r.radii.iter().all(|&v| v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("region {} has non-positive radii", r.activity)));
            }
            for other in &regions[..i] {
                if other.activity == r.activity {
                    return Err(Error::Config(format!("duplicate region {}", r.activity)));
                }
                if regions_overlap(other, r) {
                    return Err(Error::Config(format!("regions {} and {} overlap", other.activity, r.activity)));
                }
            }
        }
        Ok(RegionSet { regions })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        RegionSet::new(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.regions)?)
    }

    pub fn regions(&self) -> &[ActivityRegion] {
        &self.regions
    }

    pub fn get(&self, activity: Activity) -> Option<&ActivityRegion> {
        self.regions.iter().find(|r| r.activity == activity)
    }

    pub fn locate(&self, hand: &WorldPoint) -> Activity {
        locate(hand, &self.regions)
    }
}

/// Activity whose spheroid contains `hand` (boundary inclusive), or `away`.
pub fn locate(hand: &WorldPoint, regions: &[ActivityRegion]) -> Activity {
    regions
        .iter()
        .find(|r| r.contains(hand))
        .map_or(Activity::Away, |r| r.activity)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct HandStreak {
    region: Option<Activity>,
    frames: usize,
}

/// Per-hand streak counters for the persistence rule.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ActivityState {
    hands: [HandStreak; 2],
}

/// Result of one frame of activity tracking.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameActivity {
    /// Active activity of the left and right hand.
    pub active: [Activity; 2],
    /// Activities that became active this frame, left hand first, without
    /// repeats.
    pub activated: Vec<Activity>,
}

impl ActivityState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Streak length of each hand in its current region.
    pub fn streaks(&self) -> [usize; 2] {
        [self.hands[0].frames, self.hands[1].frames]
    }

    /// Advances by one frame. A missing hand counts as away.
    pub fn update(&mut self, hands: [Option<WorldPoint>; 2], regions: &RegionSet) -> FrameActivity {
        let located = hands.map(|h| h.map_or(Activity::Away, |p| regions.locate(&p)));
        self.update_located(located)
    }

    /// Same as [`update`](Self::update) with hands already located.
    pub fn update_located(&mut self, located: [Activity; 2]) -> FrameActivity {
        let mut active = [Activity::Away; 2];
        let mut activated = Vec::new();
        for (hand, &here) in self.hands.iter_mut().zip(&located) {
            if here == Activity::Away {
                *hand = HandStreak::default();
                continue;
            }
            if hand.region == Some(here) {
                hand.frames += 1;
            } else {
                *hand = HandStreak {
                    region: Some(here),
                    frames: 1,
                };
            }
            if hand.frames == PERSISTENCE_FRAMES && !activated.contains(&here) {
                activated.push(here);
            }
        }
        for (slot, hand) in active.iter_mut().zip(&self.hands) {
            if hand.frames >= PERSISTENCE_FRAMES {
                *slot = hand.region.unwrap_or(Activity::Away);
            }
        }
        FrameActivity { active, activated }
    }
}

/// Steps each step depends on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StepOrdering {
    pub requires: BTreeMap<Step, Vec<Step>>,
}

impl Default for StepOrdering {
    fn default() -> Self {
        let mut requires = BTreeMap::new();
        requires.insert(Step::TurnOnWater, vec![]);
        requires.insert(Step::GetSoap, vec![]);
        requires.insert(Step::RinseHands, vec![Step::TurnOnWater, Step::GetSoap]);
        requires.insert(Step::TurnOffWater, vec![Step::RinseHands]);
        requires.insert(Step::DryHands, vec![Step::RinseHands]);
        StepOrdering { requires }
    }
}

impl StepOrdering {
    pub fn prerequisites(&self, step: Step) -> &[Step] {
        self.requires.get(&step).map_or(&[], Vec::as_slice)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ordering: StepOrdering = serde_json::from_str(text)?;
        ordering.validate()?;
        Ok(ordering)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Rejects self-dependencies and cycles.
    pub fn validate(&self) -> Result<()> {
        fn visit(o: &StepOrdering, s: Step, stack: &mut Vec<Step>) -> Result<()> {
            if stack.contains(&s) {
                return Err(Error::Config(format!("step ordering has a cycle through {}", s.name())));
            }
            stack.push(s);
            for &p in o.prerequisites(s) {
                visit(o, p, stack)?;
            }
            stack.pop();
            Ok(())
        }
        for s in Step::ALL {
            visit(self, s, &mut Vec::new())?;
        }
        Ok(())
    }
}

/// Completion flags in [`Step::ALL`] order.
pub type StepFlags = [bool; 5];

/// Turns activity activations into completed steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepTracker {
    ordering: StepOrdering,
    complete: StepFlags,
}

impl StepTracker {
    pub fn new(ordering: StepOrdering) -> Self {
        StepTracker {
            ordering,
            complete: [false; 5],
        }
    }

    pub fn flags(&self) -> StepFlags {
        self.complete
    }

    pub fn is_complete(&self, step: Step) -> bool {
        self.complete[step.index()]
    }

    pub fn completed_steps(&self) -> Vec<Step> {
        Step::ALL.into_iter().filter(|s| self.is_complete(*s)).collect()
    }

    fn step_for(&self, activity: Activity) -> Option<Step> {
        match activity {
            // the tap turns water off only once hands have been rinsed
            Activity::Tap if self.is_complete(Step::RinseHands) => Some(Step::TurnOffWater),
            Activity::Tap => Some(Step::TurnOnWater),
            Activity::Soap => Some(Step::GetSoap),
            Activity::Water => Some(Step::RinseHands),
            Activity::Towel => Some(Step::DryHands),
            Activity::Sink | Activity::Away => None,
        }
    }

    /// Feeds one activation; returns the step it completed, if any.
    pub fn on_activation(&mut self, activity: Activity) -> Option<Step> {
        let step = self.step_for(activity)?;
        if self.is_complete(step) {
            return None;
        }
        if self.ordering.prerequisites(step).iter().all(|p| self.is_complete(*p)) {
            self.complete[step.index()] = true;
            Some(step)
        } else {
            None
        }
    }
}

/// Step completion for a whole ordered stream of activations.
pub fn track_steps(stream: &[Activity], ordering: &StepOrdering) -> StepFlags {
    let mut tracker = StepTracker::new(ordering.clone());
    for &a in stream {
        tracker.on_activation(a);
    }
    tracker.flags()
}

/// Per-step agreement between tracked and true completion.
pub fn trial_confusion(tracked: &StepFlags, truth: &StepFlags) -> BinaryCounts {
    let mut c = BinaryCounts::default();
    for (&t, &g) in tracked.iter().zip(truth) {
        match (t, g) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

/// One row of an activity timeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimelineRow {
    pub frame: usize,
    pub active: [Activity; 2],
    pub completed: Vec<Step>,
}

/// Persistence rule plus step tracking over a single trial.
#[derive(Debug, Clone)]
pub struct TrialTracker<'a> {
    regions: &'a RegionSet,
    state: ActivityState,
    steps: StepTracker,
    frame: usize,
}

impl<'a> TrialTracker<'a> {
    pub fn new(regions: &'a RegionSet, ordering: StepOrdering) -> Self {
        TrialTracker {
            regions,
            state: ActivityState::new(),
            steps: StepTracker::new(ordering),
            frame: 0,
        }
    }

    pub fn push(&mut self, hands: [Option<WorldPoint>; 2]) -> TimelineRow {
        let fa = self.state.update(hands, self.regions);
        for a in &fa.activated {
            self.steps.on_activation(*a);
        }
        let row = TimelineRow {
            frame: self.frame,
            active: fa.active,
            completed: self.steps.completed_steps(),
        };
        self.frame += 1;
        row
    }

    pub fn flags(&self) -> StepFlags {
        self.steps.flags()
    }
}
