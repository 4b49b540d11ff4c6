//! Synthetic overhead depth scenes and scripted hand-washing trials.
//!
//! A person is a handful of rigid primitives: a head ellipsoid, torso
//! ellipsoids, two hand ellipsoids and arm capsules joining shoulders to
//! wrists. Frames are ray cast against an overhead pinhole camera above a
//! flat floor. Hands and head carry their own labels; everything else on
//! the person is body.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::activity::{track_steps, Action, Activity, RegionSet, StepFlags, StepOrdering};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::imaging::{part_center_of_mass, CameraIntrinsics, DepthImage, LabelImage, Part, WorldPoint};
use crate::proposals::PerPart;

pub const DEFAULT_NOISE_SIGMA: f64 = 0.003;
pub const DEFAULT_FLOOR_DEPTH: f64 = 2.5;
/// Foreground cut relative to the floor.
pub const FLOOR_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: WorldPoint,
    pub radii: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Capsule {
    pub a: WorldPoint,
    pub b: WorldPoint,
    pub radius: f64,
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Nearest positive `t` with `|t d - c| = r`.
fn sphere_hit(c: [f64; 3], r: f64, d: [f64; 3]) -> Option<f64> {
    let a = dot(d, d);
    let b = dot(d, c);
    let disc = b * b - a * (dot(c, c) - r * r);
    if disc < 0.0 {
        return None;
    }
    let t = (b - disc.sqrt()) / a;
    (t > 0.0).then_some(t)
}

impl Ellipsoid {
    fn intersect(&self, d: [f64; 3]) -> Option<f64> {
        let c = self.center.to_array();
        let r = self.radii;
        sphere_hit([0, 1, 2].map(|i| c[i] / r[i]), 1.0, [0, 1, 2].map(|i| d[i] / r[i]))
    }

    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let c = self.center.to_array();
        ([0, 1, 2].map(|i| c[i] - self.radii[i]), [0, 1, 2].map(|i| c[i] + self.radii[i]))
    }
}

impl Capsule {
    fn intersect(&self, d: [f64; 3]) -> Option<f64> {
        let a = self.a.to_array();
        let b = self.b.to_array();
        let r = self.radius;
        let ba = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let baba = dot(ba, ba);
        let bard = dot(ba, d);
        let baoa = -dot(ba, a);
        let rdoa = -dot(d, a);
        let qa = baba * dot(d, d) - bard * bard;
        let qb = baba * rdoa - baoa * bard;
        let qc = baba * dot(a, a) - baoa * baoa - r * r * baba;
        let mut best = None;
        let disc = qb * qb - qa * qc;
        if qa > 1e-12 && disc >= 0.0 {
            let t = (-qb - disc.sqrt()) / qa;
            let y = baoa + t * bard;
            if t > 0.0 && (0.0..=baba).contains(&y) {
                best = Some(t);
            }
        }
        for end in [a, b] {
            if let Some(t) = sphere_hit(end, r, d) {
                best = Some(best.map_or(t, |bt: f64| bt.min(t)));
            }
        }
        best
    }

    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let a = self.a.to_array();
        let b = self.b.to_array();
        (
            [0, 1, 2].map(|i| a[i].min(b[i]) - self.radius),
            [0, 1, 2].map(|i| a[i].max(b[i]) + self.radius),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shape {
    Ellipsoid(Ellipsoid),
    Capsule(Capsule),
}

impl Shape {
    fn intersect(&self, d: [f64; 3]) -> Option<f64> {
        match self {
            Shape::Ellipsoid(e) => e.intersect(d),
            Shape::Capsule(c) => c.intersect(d),
        }
    }

    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        match self {
            Shape::Ellipsoid(e) => e.bounds(),
            Shape::Capsule(c) => c.bounds(),
        }
    }
}

/// Articulated pose and ground truth of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseFrame {
    pub head: Option<Ellipsoid>,
    /// Left then right hand.
    pub hands: [Option<Ellipsoid>; 2],
    pub torso: Vec<Ellipsoid>,
    pub arms: Vec<Capsule>,
    pub floor_depth: f64,
    pub action: Action,
    /// Ground-truth activity of the left and right hand.
    pub activity: [Activity; 2],
}

impl PoseFrame {
    pub fn empty(floor_depth: f64) -> Self {
        PoseFrame {
            head: None,
            hands: [None, None],
            torso: Vec::new(),
            arms: Vec::new(),
            floor_depth,
            action: Action::Walking,
            activity: [Activity::Away; 2],
        }
    }

    fn primitives(&self) -> Vec<(Shape, Part)> {
        let mut out = Vec::new();
        out.extend(self.head.map(|e| (Shape::Ellipsoid(e), Part::Head)));
        out.extend(self.hands[0].map(|e| (Shape::Ellipsoid(e), Part::LeftHand)));
        out.extend(self.hands[1].map(|e| (Shape::Ellipsoid(e), Part::RightHand)));
        out.extend(self.torso.iter().map(|&e| (Shape::Ellipsoid(e), Part::Body)));
        out.extend(self.arms.iter().map(|&c| (Shape::Capsule(c), Part::Body)));
        out
    }

    /// Analytic centers of the tracked parts.
    pub fn centers(&self) -> PerPart<Option<WorldPoint>> {
        PerPart {
            left_hand: self.hands[0].map(|e| e.center),
            right_hand: self.hands[1].map(|e| e.center),
            head: self.head.map(|e| e.center),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.floor_depth > 0.0) {
            return Err(Error::Script(format!("floor depth {} must be positive", self.floor_depth)));
        }
        for (shape, part) in self.primitives() {
            let (lo, hi) = shape.bounds();
            if lo[2] <= 0.0 {
                return Err(Error::Script(format!("{part} primitive reaches behind the camera")));
            }
            if hi[2] >= self.floor_depth {
                return Err(Error::Script(format!("{part} primitive reaches below the floor")));
            }
        }
        Ok(())
    }
}

/// Image size plus intrinsics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub intrinsics: CameraIntrinsics,
    pub width: usize,
    pub height: usize,
}

impl Default for Camera {
    fn default() -> Self {
        Camera {
            intrinsics: CameraIntrinsics::default(),
            width: 640,
            height: 480,
        }
    }
}

impl Camera {
    pub fn sees(&self, p: &WorldPoint) -> bool {
        if p.z <= 0.0 {
            return false;
        }
        let (u, v) = self.intrinsics.project(p);
        (0.0..self.width as f64 - 0.5).contains(&u) && (0.0..self.height as f64 - 0.5).contains(&v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    /// Raw depth including the floor, quantized to millimeters.
    pub depth: DepthImage,
    /// Full labels: hands, head and body, background on the floor.
    pub labels: LabelImage,
    /// Pixels whose nearest surface is a part.
    pub foreground: Vec<bool>,
    pub centers: PerPart<Option<WorldPoint>>,
    /// Mean world position of each part's labeled pixels.
    pub label_centers: PerPart<Option<WorldPoint>>,
}

impl RenderedFrame {
    /// Labels as annotated by hand: hands and head only, body left blank.
    pub fn partial_labels(&self) -> LabelImage {
        let mut out = self.labels.clone();
        for y in 0..out.height() {
            for x in 0..out.width() {
                if out.get(x, y) == Part::Body {
                    out.set(x, y, Part::Background);
                }
            }
        }
        out
    }
}

/// Ray casts one frame. `noise_sigma = 0` gives exact (quantized) depth.
pub fn render_frame(frame: &PoseFrame, camera: &Camera, noise_sigma: f64, seed: u64) -> Result<RenderedFrame> {
    let k = camera.intrinsics;
    k.validate_for(camera.width, camera.height)?;
    frame.validate()?;
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidInput(format!("noise sigma {noise_sigma} must be >= 0")));
    }
    let (w, h) = (camera.width, camera.height);
    let mut zbuf = vec![frame.floor_depth; w * h];
    let mut label = vec![Part::Background; w * h];
    for (shape, part) in frame.primitives() {
        let (lo, hi) = shape.bounds();
        let (mut u0, mut v0, mut u1, mut v1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for corner in 0..8 {
            let p = WorldPoint::new(
                if corner & 1 == 0 { lo[0] } else { hi[0] },
                if corner & 2 == 0 { lo[1] } else { hi[1] },
                if corner & 4 == 0 { lo[2] } else { hi[2] },
            );
            let (u, v) = k.project(&p);
            u0 = u0.min(u);
            v0 = v0.min(v);
            u1 = u1.max(u);
            v1 = v1.max(v);
        }
        if u1 < 0.0 || v1 < 0.0 || u0 > w as f64 - 1.0 || v0 > h as f64 - 1.0 {
            continue;
        }
        let xs = (u0.floor().max(0.0) as usize)..=(u1.ceil() as usize).min(w - 1);
        let ys = (v0.floor().max(0.0) as usize)..=(v1.ceil() as usize).min(h - 1);
        for y in ys {
            let dy = (y as f64 - k.cy) / k.fy;
            for x in xs.clone() {
                let d = [(x as f64 - k.cx) / k.fx, dy, 1.0];
                if let Some(t) = shape.intersect(d) {
                    let i = y * w + x;
                    if t < zbuf[i] {
                        zbuf[i] = t;
                        label[i] = part;
                    }
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mm: Vec<u16> = zbuf
        .iter()
        .map(|&z| {
            let z = if noise_sigma > 0.0 { z + noise.sample(&mut rng) } else { z };
            (z * 1000.0).round().clamp(1.0, u16::MAX as f64) as u16
        })
        .collect();
    let depth = DepthImage::from_millimeters(w, h, &mm)?;
    let labels = LabelImage::new(w, h, label.iter().map(|p| p.label()).collect())?;
    let foreground = label.iter().map(|&p| p != Part::Background).collect();
    let mut label_centers = PerPart::uniform(None);
    for part in Part::TRACKED {
        label_centers.set(part, part_center_of_mass(&labels, &depth, part, &k)?);
    }
    Ok(RenderedFrame {
        depth,
        labels,
        foreground,
        centers: frame.centers(),
        label_centers,
    })
}

/// One element of a trial template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateItem {
    /// Walk up to the sink (first time) or away from it.
    Walk,
    /// Turn the body a little and back.
    Turn,
    /// Dwell with the hand(s) inside an activity region.
    Visit(Activity),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub items: Vec<TemplateItem>,
}

impl Template {
    /// All five steps in order: tap, soap, water, tap, towel.
    pub fn canonical() -> Self {
        use Activity::*;
        use TemplateItem::*;
        Template {
            items: vec![Walk, Visit(Tap), Visit(Soap), Visit(Water), Visit(Tap), Visit(Towel), Turn, Walk],
        }
    }

    /// Copy without the visits at the given positions of [`activations`](Self::activations).
    pub fn omitting(&self, visits: &[usize]) -> Self {
        let mut n = 0;
        let items = self
            .items
            .iter()
            .filter(|item| match item {
                TemplateItem::Visit(_) => {
                    n += 1;
                    !visits.contains(&(n - 1))
                }
                _ => true,
            })
            .copied()
            .collect();
        Template { items }
    }

    pub fn activations(&self) -> Vec<Activity> {
        self.items
            .iter()
            .filter_map(|i| match i {
                TemplateItem::Visit(a) => Some(*a),
                _ => None,
            })
            .collect()
    }

    /// Canonical template with up to two visits left out and, sometimes, a
    /// step-neutral sink visit added.
    pub fn varied(seed: u64) -> Self {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let canonical = Template::canonical();
        let mut visits: Vec<usize> = (0..canonical.activations().len()).collect();
        visits.shuffle(&mut rng);
        let drop = rng.random_range(0..=2);
        let mut t = canonical.omitting(&visits[..drop]);
        if rng.random_bool(0.25) {
            let at = rng.random_range(1..t.items.len());
            t.items.insert(at, TemplateItem::Visit(Activity::Sink));
        }
        t
    }

    pub fn validate(&self) -> Result<()> {
        if self.items.is_empty() {
            return Err(Error::Script("empty template".into()));
        }
        if self.items.contains(&TemplateItem::Visit(Activity::Away)) {
            return Err(Error::Script("`away` is not a visitable activity".into()));
        }
        Ok(())
    }
}

/// Default region layout around a sink in front of the person, who faces
/// -y with their right hand on +x.
pub fn default_regions() -> RegionSet {
    use crate::activity::ActivityRegion;
    let r = |activity, c: [f64; 3], radii| ActivityRegion {
        activity,
        center: WorldPoint::from_array(c),
        radii,
    };
    RegionSet::new(vec![
        r(Activity::Soap, [-0.40, -0.10, 2.15], [0.08, 0.08, 0.15]),
        r(Activity::Tap, [0.22, -0.28, 2.10], [0.07, 0.07, 0.15]),
        r(Activity::Water, [0.0, -0.10, 2.20], [0.10, 0.08, 0.15]),
        r(Activity::Sink, [-0.17, -0.33, 2.25], [0.07, 0.05, 0.12]),
        r(Activity::Towel, [0.55, 0.05, 2.0], [0.08, 0.12, 0.15]),
    ])
    .expect("default regions are disjoint")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptConfig {
    pub regions: RegionSet,
    pub ordering: StepOrdering,
    pub camera: Camera,
    pub floor_depth: f64,
    /// Inclusive frame-count ranges.
    pub dwell_frames: (usize, usize),
    pub transit_frames: (usize, usize),
    pub walk_frames: (usize, usize),
    pub turn_frames: (usize, usize),
}

impl Default for ScriptConfig {
    fn default() -> Self {
        ScriptConfig {
            regions: default_regions(),
            ordering: StepOrdering::default(),
            camera: Camera::default(),
            floor_depth: DEFAULT_FLOOR_DEPTH,
            dwell_frames: (5, 8),
            transit_frames: (3, 4),
            walk_frames: (4, 6),
            turn_frames: (5, 7),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneScript {
    pub frames: Vec<PoseFrame>,
    /// Activities the script intends to activate, in order.
    pub intended_activations: Vec<Activity>,
    pub intended_steps: StepFlags,
}

/// Person-specific body dimensions, drawn once per trial.
#[derive(Debug, Clone, Copy)]
struct Body {
    head_radii: [f64; 3],
    torso_radii: [f64; 3],
    hand_radii: [f64; 3],
    arm_radius: f64,
    /// Body position at the sink.
    origin: [f64; 2],
}

/// Where the body stands and how it is turned.
#[derive(Debug, Clone, Copy)]
struct Stance {
    offset: [f64; 2],
    yaw: f64,
}

const HEAD_Z: f64 = 1.65;
const TORSO_Z: f64 = 1.97;
const SHOULDER_Z: f64 = 1.92;
const AWAY_OFFSET: [f64; 2] = [0.0, 0.22];

impl Body {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let s: f64 = rng.random_range(0.92..1.08);
        Body {
            head_radii: [0.075 * s, 0.095 * s, 0.10],
            torso_radii: [0.21 * s, 0.11 * s, 0.12],
            hand_radii: [0.05 * s, 0.042 * s, 0.018],
            arm_radius: 0.03,
            origin: [rng.random_range(-0.03..0.03), 0.25 + rng.random_range(-0.02..0.02)],
        }
    }

    /// Point on the body at local `(x, y)` moved by the stance.
    fn place(&self, stance: Stance, local: [f64; 2], z: f64) -> WorldPoint {
        let (s, c) = stance.yaw.sin_cos();
        WorldPoint::new(
            self.origin[0] + stance.offset[0] + c * local[0] - s * local[1],
            self.origin[1] + stance.offset[1] + s * local[0] + c * local[1],
            z,
        )
    }

    fn rest(&self, stance: Stance, hand: usize) -> WorldPoint {
        let side = if hand == 0 { -1.0 } else { 1.0 };
        self.place(stance, [side * 0.28, 0.04], 2.05)
    }

    fn pose(&self, stance: Stance, hands: [WorldPoint; 2], floor_depth: f64) -> PoseFrame {
        let mut arms = Vec::new();
        for (i, hand) in hands.iter().enumerate() {
            let side = if i == 0 { -1.0 } else { 1.0 };
            let shoulder = self.place(stance, [side * 0.17, 0.0], SHOULDER_Z);
            let d = [shoulder.x - hand.x, shoulder.y - hand.y, shoulder.z - hand.z];
            let len = dot(d, d).sqrt().max(1e-9);
            // the wrist sits past the hand so the arm does not cover it
            let reach = (self.hand_radii[0] + 0.02).min(len);
            let wrist = WorldPoint::new(hand.x + d[0] / len * reach, hand.y + d[1] / len * reach, hand.z + d[2] / len * reach);
            arms.push(Capsule {
                a: shoulder,
                b: wrist,
                radius: self.arm_radius,
            });
        }
        PoseFrame {
            head: Some(Ellipsoid {
                center: self.place(stance, [0.0, -0.01], HEAD_Z),
                radii: self.head_radii,
            }),
            hands: hands.map(|c| {
                Some(Ellipsoid {
                    center: c,
                    radii: self.hand_radii,
                })
            }),
            torso: vec![Ellipsoid {
                center: self.place(stance, [0.0, 0.02], TORSO_Z),
                radii: self.torso_radii,
            }],
            arms,
            floor_depth,
            action: Action::Walking,
            activity: [Activity::Away; 2],
        }
    }
}

fn lerp(a: WorldPoint, b: WorldPoint, s: f64) -> WorldPoint {
    WorldPoint::new(a.x + (b.x - a.x) * s, a.y + (b.y - a.y) * s, a.z + (b.z - a.z) * s)
}

fn smooth(s: f64) -> f64 {
    s * s * (3.0 - 2.0 * s)
}

/// Hands that visit each activity, and where they go inside its region.
fn visit_targets(activity: Activity, center: WorldPoint) -> [Option<WorldPoint>; 2] {
    let shifted = |dx: f64| Some(WorldPoint::new(center.x + dx, center.y, center.z));
    match activity {
        Activity::Soap | Activity::Sink => [Some(center), None],
        Activity::Tap | Activity::Towel => [None, Some(center)],
        Activity::Water => [shifted(-0.045), shifted(0.045)],
        Activity::Away => [None, None],
    }
}

struct Scripter<'a> {
    config: &'a ScriptConfig,
    body: Body,
    rng: ChaCha8Rng,
    stance: Stance,
    hands: [WorldPoint; 2],
    walked: bool,
    frames: Vec<PoseFrame>,
}

impl Scripter<'_> {
    fn frames_in(&mut self, range: (usize, usize)) -> usize {
        self.rng.random_range(range.0..=range.1.max(range.0))
    }

    fn jitter(&mut self, p: WorldPoint, amount: f64) -> WorldPoint {
        WorldPoint::new(
            p.x + self.rng.random_range(-amount..=amount),
            p.y + self.rng.random_range(-amount..=amount),
            p.z + self.rng.random_range(-amount..=amount),
        )
    }

    fn emit(&mut self, action: Action) {
        let mut frame = self.body.pose(self.stance, self.hands, self.config.floor_depth);
        frame.action = action;
        frame.activity = self.hands.map(|h| self.config.regions.locate(&h));
        self.frames.push(frame);
    }

    /// Moves hands toward `targets` (None = rest) over a transit.
    fn transit(&mut self, targets: [Option<WorldPoint>; 2], action: Action) {
        let n = self.frames_in(self.config.transit_frames);
        let start = self.hands;
        let goal = [0, 1].map(|i| targets[i].unwrap_or_else(|| self.body.rest(self.stance, i)));
        for f in 1..=n {
            let s = smooth(f as f64 / n as f64);
            self.hands = [lerp(start[0], goal[0], s), lerp(start[1], goal[1], s)];
            self.emit(action);
        }
    }

    fn dwell(&mut self, targets: [Option<WorldPoint>; 2], n: usize, action: Action) {
        for _ in 0..n {
            for i in 0..2 {
                let base = targets[i].unwrap_or_else(|| self.body.rest(self.stance, i));
                self.hands[i] = self.jitter(base, 0.008);
            }
            self.emit(action);
        }
    }

    fn move_body(&mut self, to: Stance, n: usize, action: Action) {
        let from = self.stance;
        for f in 1..=n {
            let s = smooth(f as f64 / n as f64);
            self.stance = Stance {
                offset: [
                    from.offset[0] + (to.offset[0] - from.offset[0]) * s,
                    from.offset[1] + (to.offset[1] - from.offset[1]) * s,
                ],
                yaw: from.yaw + (to.yaw - from.yaw) * s,
            };
            self.hands = [0, 1].map(|i| {
                let swing = if action == Action::Walking { 0.03 * (f as f64 * 1.7).sin() } else { 0.0 };
                let r = self.body.rest(self.stance, i);
                WorldPoint::new(r.x, r.y + if i == 0 { swing } else { -swing }, r.z)
            });
            self.emit(action);
        }
    }
}

/// Scripts a trial from `template`; ground-truth step flags follow from
/// the intended activations and the configured step ordering.
pub fn script_trial(template: &Template, config: &ScriptConfig, seed: u64) -> Result<SceneScript> {
    template.validate()?;
    for a in template.activations() {
        let region = config
            .regions
            .get(a)
            .ok_or_else(|| Error::Script(format!("no region configured for {a}")))?;
        if !config.camera.sees(&region.center) {
            return Err(Error::Script(format!("region {a} lies outside the camera view")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    let body = Body::sample(&mut rng);
    let starts_away = template.items.first() == Some(&TemplateItem::Walk);
    let stance = Stance {
        offset: if starts_away { AWAY_OFFSET } else { [0.0, 0.0] },
        yaw: 0.0,
    };
    let hands = [body.rest(stance, 0), body.rest(stance, 1)];
    let mut s = Scripter {
        config,
        body,
        rng,
        stance,
        hands,
        walked: !starts_away,
        frames: Vec::new(),
    };
    s.emit(if starts_away { Action::Walking } else { Action::WashingHands });

    let mut previous: Option<Activity> = None;
    for item in &template.items {
        match *item {
            TemplateItem::Walk => {
                let n = s.frames_in(config.walk_frames);
                s.transit([None, None], Action::Walking);
                let offset = if s.walked { AWAY_OFFSET } else { [0.0, 0.0] };
                s.walked = true;
                s.move_body(Stance { offset, yaw: 0.0 }, n, Action::Walking);
                previous = None;
            }
            TemplateItem::Turn => {
                s.transit([None, None], Action::Turning);
                let n = s.frames_in(config.turn_frames);
                let yaw = s.rng.random_range(0.2..0.35) * if s.rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let base = s.stance;
                s.move_body(Stance { yaw, ..base }, n.div_ceil(2), Action::Turning);
                s.move_body(base, n / 2 + 1, Action::Turning);
                previous = None;
            }
            TemplateItem::Visit(activity) => {
                let action = if activity == Activity::Towel {
                    Action::DryingHands
                } else {
                    Action::WashingHands
                };
                if previous == Some(activity) {
                    // leave the region so the next dwell is a fresh activation
                    s.transit([None, None], action);
                    s.dwell([None, None], 1, action);
                }
                let center = config.regions.get(activity).expect("checked above").center;
                let targets = visit_targets(activity, center);
                s.transit(targets, action);
                let n = s.frames_in(config.dwell_frames).max(crate::activity::PERSISTENCE_FRAMES);
                s.dwell(targets, n, action);
                previous = Some(activity);
            }
        }
    }
    if previous.is_some() {
        s.transit([None, None], Action::WashingHands);
    }
    for f in &s.frames {
        f.validate()?;
        for hand in f.hands.iter().flatten() {
            if !config.camera.sees(&hand.center) {
                return Err(Error::Script("hand trajectory leaves the camera view".into()));
            }
        }
    }
    let intended_activations = template.activations();
    let intended_steps = track_steps(&intended_activations, &config.ordering);
    Ok(SceneScript {
        frames: s.frames,
        intended_activations,
        intended_steps,
    })
}

/// Renders every frame of a script; frame `i` uses noise seed `derive_seed(seed, i)`.
pub fn render_script(script: &SceneScript, camera: &Camera, noise_sigma: f64, seed: u64) -> Result<Vec<RenderedFrame>> {
    use rayon::prelude::*;
    script
        .frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| render_frame(f, camera, noise_sigma, derive_seed(seed, i as u64)))
        .collect()
}
