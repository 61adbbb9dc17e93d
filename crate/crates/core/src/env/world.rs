use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{vocab, EnvConfig, EnvError, EnvKind};
use crate::seed;
use crate::trajectory::{Split, TaskInstruction, Trajectory};

/// Observation returned for any action the world cannot interpret.
pub const NOTHING_HAPPENS: &str = "Nothing happens.";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Place {
    Floor(usize),
    On(usize),
    Held,
}

#[derive(Debug, Clone, PartialEq)]
enum Goal {
    Ordered {
        subgoals: Vec<String>,
    },
    Deliver {
        object: usize,
        target_room: usize,
        needs_clean: bool,
    },
}

/// Immutable layout and goal of one generated task.
#[derive(Debug, PartialEq)]
pub struct World {
    config: EnvConfig,
    rooms: Vec<&'static str>,
    receptacles: Vec<&'static str>,
    objects: Vec<&'static str>,
    sink_room: usize,
    start_room: usize,
    homes: Vec<Place>,
    goal: Goal,
    instruction: String,
}

impl World {
    fn generate(config: &EnvConfig, task_seed: u64) -> World {
        let mut rng = seed::stream(config.seed, "world", &[task_seed]);
        let v = config.vocabulary;

        let mut room_idx: Vec<usize> = (0..vocab::MAX_ROOMS).collect();
        room_idx.shuffle(&mut rng);
        room_idx.truncate(config.n_rooms);
        let rooms: Vec<&'static str> = room_idx.iter().map(|&i| vocab::rooms(v)[i]).collect();

        let mut rec_idx: Vec<usize> = (0..vocab::MAX_ROOMS).collect();
        rec_idx.shuffle(&mut rng);
        let receptacles: Vec<&'static str> = rec_idx[..config.n_rooms]
            .iter()
            .map(|&i| vocab::receptacles(v)[i])
            .collect();

        let mut obj_idx: Vec<usize> = (0..vocab::MAX_OBJECTS).collect();
        obj_idx.shuffle(&mut rng);
        obj_idx.truncate(config.n_objects);
        let objects: Vec<&'static str> = obj_idx.iter().map(|&i| vocab::objects(v)[i]).collect();

        let mut homes: Vec<Place> = (0..config.n_objects)
            .map(|_| {
                let r = rng.random_range(0..config.n_rooms);
                if rng.random_bool(0.5) {
                    Place::Floor(r)
                } else {
                    Place::On(r)
                }
            })
            .collect();
        let sink_room = rng.random_range(0..config.n_rooms);
        let start_room = rng.random_range(0..config.n_rooms);

        let (goal, instruction) = match config.kind {
            EnvKind::Dense => {
                let mut pairs: Vec<(usize, usize)> = (0..vocab::DENSE_VERBS.len())
                    .flat_map(|vb| (0..config.n_objects).map(move |o| (vb, o)))
                    .collect();
                pairs.shuffle(&mut rng);
                let subgoals: Vec<String> = pairs[..config.n_subgoals as usize]
                    .iter()
                    .map(|&(vb, o)| format!("{} {}", vocab::DENSE_VERBS[vb], objects[o]))
                    .collect();
                let text = ordered_instruction(&subgoals);
                (Goal::Ordered { subgoals }, text)
            }
            EnvKind::Sparse => {
                let object = rng.random_range(0..config.n_objects);
                let target_room = rng.random_range(0..config.n_rooms);
                let needs_clean = rng.random_bool(0.5);
                if homes[object] == Place::On(target_room) {
                    homes[object] = Place::Floor(target_room);
                }
                let text = if needs_clean {
                    format!(
                        "Clean the {} and put it on the {} in the {}.",
                        objects[object], receptacles[target_room], rooms[target_room]
                    )
                } else {
                    format!(
                        "Put the {} on the {} in the {}.",
                        objects[object], receptacles[target_room], rooms[target_room]
                    )
                };
                (
                    Goal::Deliver {
                        object,
                        target_room,
                        needs_clean,
                    },
                    text,
                )
            }
        };

        World {
            config: config.clone(),
            rooms,
            receptacles,
            objects,
            sink_room,
            start_room,
            homes,
            goal,
            instruction,
        }
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn instruction(&self) -> &str {
        &self.instruction
    }

    pub fn rooms(&self) -> &[&'static str] {
        &self.rooms
    }

    pub fn objects(&self) -> &[&'static str] {
        &self.objects
    }

    /// Sub-goal actions in order (dense worlds); empty for sparse worlds.
    pub fn subgoals(&self) -> &[String] {
        match &self.goal {
            Goal::Ordered { subgoals } => subgoals,
            Goal::Deliver { .. } => &[],
        }
    }

    fn n_subgoals(&self) -> u32 {
        match &self.goal {
            Goal::Ordered { subgoals } => subgoals.len() as u32,
            Goal::Deliver { .. } => 1,
        }
    }

    /// Every well-formed action for this world, whether or not it is
    /// applicable in a particular state.
    pub fn candidate_actions(&self) -> Vec<String> {
        let mut out: Vec<String> = self.rooms.iter().map(|r| format!("go to {r}")).collect();
        out.push("look around".to_string());
        match self.config.kind {
            EnvKind::Dense => {
                for verb in vocab::DENSE_VERBS {
                    for o in &self.objects {
                        out.push(format!("{verb} {o}"));
                    }
                }
            }
            EnvKind::Sparse => {
                for o in &self.objects {
                    out.push(format!("take {o}"));
                    out.push(format!("clean {o} with sink"));
                    for rec in &self.receptacles {
                        out.push(format!("put {o} on {rec}"));
                    }
                }
            }
        }
        out
    }
}

fn ordered_instruction(subgoals: &[String]) -> String {
    let n = subgoals.len();
    let mut text = String::from("Complete the procedure in order.");
    for (i, sg) in subgoals.iter().enumerate() {
        let lead = if i == 0 {
            "First"
        } else if i + 1 == n {
            "Finally"
        } else if i % 2 == 1 {
            "Next"
        } else {
            "Then"
        };
        text.push_str(&format!(" {lead}, {sg}."));
    }
    text
}

/// Mutable part of an episode. Cloning is cheap; the world is shared.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    world: Arc<World>,
    room: usize,
    places: Vec<Place>,
    cleaned: Vec<bool>,
    subgoals_done: u32,
    step_count: u32,
    terminated: bool,
}

impl EnvState {
    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn room(&self) -> &'static str {
        self.world.rooms[self.room]
    }

    pub fn inventory(&self) -> BTreeSet<&'static str> {
        self.places
            .iter()
            .enumerate()
            .filter(|(_, p)| **p == Place::Held)
            .map(|(i, _)| self.world.objects[i])
            .collect()
    }

    pub fn subgoals_done(&self) -> u32 {
        self.subgoals_done
    }

    pub fn n_subgoals(&self) -> u32 {
        self.world.n_subgoals()
    }

    pub fn step_count(&self) -> u32 {
        self.step_count
    }

    pub fn remaining_steps(&self) -> u32 {
        self.world.config.horizon - self.step_count
    }

    pub fn terminated(&self) -> bool {
        self.terminated
    }

    fn goal_holds(&self) -> bool {
        match &self.world.goal {
            Goal::Ordered { subgoals } => self.subgoals_done as usize == subgoals.len(),
            Goal::Deliver {
                object,
                target_room,
                needs_clean,
            } => {
                self.places[*object] == Place::On(*target_room)
                    && (!needs_clean || self.cleaned[*object])
            }
        }
    }

    /// Reward of the current state: sub-goal fraction (dense) or the goal
    /// predicate (sparse). Equals [`final_reward`] once terminated.
    pub fn reward_so_far(&self) -> f64 {
        match self.world.config.kind {
            EnvKind::Dense => f64::from(self.subgoals_done) / f64::from(self.n_subgoals()),
            EnvKind::Sparse => {
                if self.goal_holds() {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn describe_room(&self) -> String {
        let w = &self.world;
        let r = self.room;
        let mut text = format!("You see a {}.", w.receptacles[r]);
        if w.sink_room == r {
            text.push_str(" There is a sink here.");
        }
        let on_floor: Vec<&str> = self.objects_at(Place::Floor(r));
        let on_rec: Vec<&str> = self.objects_at(Place::On(r));
        if !on_rec.is_empty() {
            text.push_str(&format!(" On the {}: {}.", w.receptacles[r], on_rec.join(", ")));
        }
        if !on_floor.is_empty() {
            text.push_str(&format!(" On the floor: {}.", on_floor.join(", ")));
        }
        let exits: Vec<&str> = w
            .rooms
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != r)
            .map(|(_, n)| *n)
            .collect();
        if !exits.is_empty() {
            text.push_str(&format!(" From here you can go to: {}.", exits.join(", ")));
        }
        text
    }

    fn objects_at(&self, place: Place) -> Vec<&'static str> {
        self.places
            .iter()
            .enumerate()
            .filter(|(_, p)| **p == place)
            .map(|(i, _)| self.world.objects[i])
            .collect()
    }

    fn object_index(&self, name: &str) -> Option<usize> {
        self.world.objects.iter().position(|o| *o == name)
    }

    /// Apply the action's effect; returns the observation, or `None` when the
    /// action is not applicable.
    fn apply(&mut self, action: &str) -> Option<String> {
        if action == "look around" {
            return Some(format!("You are in the {}. {}", self.room(), self.describe_room()));
        }
        if action == "inventory" {
            let inv: Vec<&str> = self.inventory().into_iter().collect();
            return Some(if inv.is_empty() {
                "You are not carrying anything.".to_string()
            } else {
                format!("You are carrying: {}.", inv.join(", "))
            });
        }
        if let Some(room) = action.strip_prefix("go to ") {
            let r = self.world.rooms.iter().position(|n| *n == room)?;
            if r == self.room {
                return Some(format!("You are already in the {room}."));
            }
            self.room = r;
            return Some(format!("You move to the {room}. {}", self.describe_room()));
        }
        match self.world.config.kind {
            EnvKind::Dense => self.apply_dense(action),
            EnvKind::Sparse => self.apply_sparse(action),
        }
    }

    fn apply_dense(&mut self, action: &str) -> Option<String> {
        let (verb, obj) = vocab::DENSE_VERBS
            .iter()
            .find_map(|v| action.strip_prefix(v).and_then(|rest| rest.strip_prefix(' ')).map(|o| (*v, o)))?;
        let o = self.object_index(obj)?;
        let name = self.world.objects[o];
        let obs = match verb {
            "focus on" => format!("You focus on the {name}."),
            "pick up" => {
                self.places[o] = Place::Held;
                format!("You pick up the {name}.")
            }
            "examine" => format!("You examine the {name}. Nothing looks unusual."),
            "activate" => format!("The {name} is now active."),
            _ => format!("You take a measurement of the {name}."),
        };
        if let Goal::Ordered { subgoals } = &self.world.goal {
            if subgoals.get(self.subgoals_done as usize).map(String::as_str) == Some(action) {
                self.subgoals_done += 1;
            }
        }
        Some(obs)
    }

    fn apply_sparse(&mut self, action: &str) -> Option<String> {
        let cur = self.room;
        if let Some(obj) = action.strip_prefix("take ") {
            let o = self.object_index(obj)?;
            if self.places[o] != Place::Floor(cur) && self.places[o] != Place::On(cur) {
                return None;
            }
            self.places[o] = Place::Held;
            return Some(format!("You pick up the {obj}."));
        }
        if let Some(obj) = action.strip_prefix("clean ").and_then(|r| r.strip_suffix(" with sink")) {
            let o = self.object_index(obj)?;
            if self.places[o] != Place::Held || self.world.sink_room != cur {
                return None;
            }
            self.cleaned[o] = true;
            return Some(format!("You clean the {obj} in the sink."));
        }
        if let Some(rest) = action.strip_prefix("put ") {
            let (obj, rec) = rest.split_once(" on ")?;
            let o = self.object_index(obj)?;
            if self.places[o] != Place::Held || self.world.receptacles[cur] != rec {
                return None;
            }
            self.places[o] = Place::On(cur);
            self.subgoals_done = u32::from(self.goal_holds());
            return Some(format!("You put the {obj} on the {rec}."));
        }
        None
    }
}

/// Generate the task for `task_seed` and return its initial state, instruction
/// and initial observation. Deterministic in `(config, task_seed)`.
pub fn reset(
    config: &EnvConfig,
    task_seed: u64,
) -> Result<(EnvState, TaskInstruction, String), EnvError> {
    config.validate()?;
    let world = Arc::new(World::generate(config, task_seed));
    let state = EnvState {
        room: world.start_room,
        places: world.homes.clone(),
        cleaned: vec![false; world.objects.len()],
        subgoals_done: 0,
        step_count: 0,
        terminated: false,
        world,
    };
    let task = TaskInstruction {
        id: format!("{}-{task_seed:016x}", config.kind.as_str()),
        text: state.world.instruction.clone(),
        domain_tag: config.kind.domain_tag().to_string(),
        split: Split::Train,
        seed: Some(task_seed),
    };
    let observation = format!("You are in the {}. {}", state.room(), state.describe_room());
    Ok((state, task, observation))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub observation: String,
    pub done: bool,
}

/// Execute one action. Inapplicable actions cost a step and leave progress unchanged.
pub fn env_step(state: &EnvState, action: &str) -> Result<StepOutcome, EnvError> {
    if state.terminated {
        return Err(EnvError::TerminatedEpisode);
    }
    let mut next = state.clone();
    let observation = next
        .apply(action)
        .unwrap_or_else(|| NOTHING_HAPPENS.to_string());
    next.step_count += 1;
    next.terminated = next.goal_holds() || next.step_count >= next.world.config.horizon;
    let done = next.terminated;
    Ok(StepOutcome {
        state: next,
        observation,
        done,
    })
}

pub fn final_reward(state: &EnvState) -> Result<f64, EnvError> {
    if !state.terminated {
        return Err(EnvError::EpisodeNotTerminated);
    }
    Ok(state.reward_so_far())
}

/// The shortest-plan action from `state`, or `None` when nothing remains to do.
pub fn expert_action(state: &EnvState) -> Option<String> {
    if state.terminated || state.goal_holds() {
        return None;
    }
    let w = &state.world;
    match &w.goal {
        Goal::Ordered { subgoals } => subgoals.get(state.subgoals_done as usize).cloned(),
        Goal::Deliver {
            object,
            target_room,
            needs_clean,
        } => {
            let o = *object;
            let name = w.objects[o];
            let go = |r: usize| format!("go to {}", w.rooms[r]);
            Some(match state.places[o] {
                Place::Floor(r) | Place::On(r) => {
                    if r == state.room {
                        format!("take {name}")
                    } else {
                        go(r)
                    }
                }
                Place::Held if *needs_clean && !state.cleaned[o] => {
                    if state.room == w.sink_room {
                        format!("clean {name} with sink")
                    } else {
                        go(w.sink_room)
                    }
                }
                Place::Held => {
                    if state.room == *target_room {
                        format!("put {name} on {}", w.receptacles[*target_room])
                    } else {
                        go(*target_room)
                    }
                }
            })
        }
    }
}

/// Whether an expert continuation from `state` still reaches the success
/// threshold within the remaining horizon. Independent of the behavior policy.
pub fn oracle_step_success(state: &EnvState) -> bool {
    let threshold = state.world.config.success_threshold();
    let mut cur = state.clone();
    while !cur.terminated {
        let Some(action) = expert_action(&cur) else { break };
        cur = env_step(&cur, &action).expect("active episode").state;
    }
    cur.reward_so_far() >= threshold
}

/// Re-execute a recorded trajectory from reset and return the resulting
/// state. Observations must match the record exactly.
pub fn replay(config: &EnvConfig, traj: &Trajectory) -> Result<EnvState, EnvError> {
    let mismatch = |t: u32, reason: String| EnvError::ReplayMismatch { t, reason };
    let task_seed = traj
        .task
        .seed
        .ok_or_else(|| mismatch(0, "trajectory carries no task seed".into()))?;
    let (mut state, task, o0) = reset(config, task_seed)?;
    if task.text != traj.task.text {
        return Err(mismatch(0, "instruction text differs from the regenerated task".into()));
    }
    for step in traj.steps() {
        if step.t == 0 {
            if step.observation != o0 {
                return Err(mismatch(0, "initial observation differs".into()));
            }
            continue;
        }
        if state.terminated {
            return Err(mismatch(step.t, "episode already terminated".into()));
        }
        let out = env_step(&state, &step.action)?;
        if out.observation != step.observation {
            return Err(mismatch(step.t, format!("observation differs after {:?}", step.action)));
        }
        state = out.state;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_expert(state: &EnvState) -> (EnvState, usize) {
        let mut s = state.clone();
        let mut n = 0;
        while let Some(a) = expert_action(&s) {
            s = env_step(&s, &a).unwrap().state;
            n += 1;
        }
        (s, n)
    }

    #[test]
    fn reset_is_deterministic() {
        let cfg = EnvConfig::default().with_seed(5);
        assert_eq!(reset(&cfg, 9).unwrap(), reset(&cfg, 9).unwrap());
        assert_ne!(reset(&cfg, 9).unwrap().1.text, reset(&cfg, 10).unwrap().1.text);
    }

    #[test]
    fn dense_instruction_enumerates_subgoals_in_order() {
        let cfg = EnvConfig::dense(3).with_seed(1);
        let (state, task, _) = reset(&cfg, 4).unwrap();
        let sgs = state.world().subgoals();
        assert_eq!(sgs.len(), 3);
        let mut cursor = 0;
        for sg in sgs {
            let at = task.text[cursor..].find(sg.as_str()).expect("subgoal listed");
            cursor += at + sg.len();
        }
        assert!(task.text.contains("First,") && task.text.contains("Finally,"));
    }

    #[test]
    fn sparse_instruction_names_object_and_target() {
        let cfg = EnvConfig::sparse().with_seed(2);
        for seed in 0..20 {
            let (state, task, _) = reset(&cfg, seed).unwrap();
            let Goal::Deliver { object, target_room, .. } = state.world().goal else {
                panic!("sparse world has a delivery goal")
            };
            let w = state.world();
            assert!(task.text.contains(w.objects[object]));
            assert!(task.text.contains(w.rooms[target_room]));
            assert!(task.text.contains(w.receptacles[target_room]));
        }
    }

    #[test]
    fn correct_subgoal_advances_progress() {
        let cfg = EnvConfig::dense(4).with_seed(3);
        let (state, _, _) = reset(&cfg, 0).unwrap();
        let first = state.world().subgoals()[0].clone();
        let out = env_step(&state, &first).unwrap();
        assert_eq!(out.state.subgoals_done(), 1);
        assert!(!out.done);
    }

    #[test]
    fn nonexistent_object_does_nothing() {
        let cfg = EnvConfig::sparse().with_seed(3);
        let (state, _, _) = reset(&cfg, 0).unwrap();
        let out = env_step(&state, "take silver thermometer").unwrap();
        assert_eq!(out.observation, NOTHING_HAPPENS);
        let mut expected = state.clone();
        expected.step_count += 1;
        assert_eq!(out.state, expected);
    }

    #[test]
    fn horizon_cutoff() {
        let cfg = EnvConfig::dense(2).with_seed(0).with_horizon(3);
        let (mut state, _, _) = reset(&cfg, 1).unwrap();
        for _ in 0..2 {
            let out = env_step(&state, "look around").unwrap();
            assert!(!out.done);
            state = out.state;
        }
        assert_eq!(state.step_count(), cfg.horizon - 1);
        let out = env_step(&state, "look around").unwrap();
        assert!(out.done);
        assert_eq!(env_step(&out.state, "look around").unwrap_err(), EnvError::TerminatedEpisode);
    }

    #[test]
    fn final_reward_cases() {
        let cfg = EnvConfig::dense(4).with_seed(8).with_horizon(4);
        let (mut state, _, _) = reset(&cfg, 2).unwrap();
        assert_eq!(final_reward(&state).unwrap_err(), EnvError::EpisodeNotTerminated);
        let sgs = state.world().subgoals().to_vec();
        for a in [&sgs[0], &sgs[1], &"look around".to_string(), &"look around".to_string()] {
            state = env_step(&state, a).unwrap().state;
        }
        assert_eq!(final_reward(&state).unwrap(), 0.5);

        let cfg = EnvConfig::sparse().with_seed(8);
        let (state, _, _) = reset(&cfg, 2).unwrap();
        let (done, _) = run_expert(&state);
        assert_eq!(final_reward(&done).unwrap(), 1.0);

        let mut idle = state.clone();
        while !idle.terminated() {
            idle = env_step(&idle, "look around").unwrap().state;
        }
        assert_eq!(final_reward(&idle).unwrap(), 0.0);
    }

    #[test]
    fn expert_completes_every_task_within_horizon() {
        for cfg in [EnvConfig::default(), EnvConfig::sparse(), EnvConfig::dense(10)] {
            for seed in 0..200 {
                let (state, _, _) = reset(&cfg, seed).unwrap();
                assert!(oracle_step_success(&state));
                let (done, n) = run_expert(&state);
                assert!(done.terminated());
                assert_eq!(final_reward(&done).unwrap(), 1.0);
                assert!(n as u32 <= cfg.horizon);
            }
        }
    }

    #[test]
    fn oracle_false_when_too_few_steps_remain() {
        // Six sub-goals, horizon 10: after five wasted steps only five remain.
        let cfg = EnvConfig::dense(6).with_seed(4);
        let (mut state, _, _) = reset(&cfg, 7).unwrap();
        for i in 0..5 {
            assert!(oracle_step_success(&state), "step {i}");
            state = env_step(&state, "use glass key").unwrap().state;
        }
        assert_eq!(state.remaining_steps(), 5);
        assert!(!oracle_step_success(&state));
    }

    #[test]
    fn sparse_goal_requires_cleaning_when_asked() {
        let cfg = EnvConfig::sparse().with_seed(11);
        let seed = (0..100)
            .find(|&s| {
                let (st, _, _) = reset(&cfg, s).unwrap();
                matches!(st.world().goal, Goal::Deliver { needs_clean: true, .. })
            })
            .unwrap();
        let (state, _, _) = reset(&cfg, seed).unwrap();
        let (done, n) = run_expert(&state);
        assert!(done.terminated());
        assert!(n >= 3, "take, clean and put at minimum");
    }

    #[test]
    fn replay_reproduces_state() {
        let cfg = EnvConfig::sparse().with_seed(1);
        let (mut state, task, o0) = reset(&cfg, 3).unwrap();
        let mut tr = Trajectory::new(task);
        tr.push_step(crate::trajectory::StepRecord::new(0, "", "OK", o0)).unwrap();
        let mut t = 1;
        while let Some(a) = expert_action(&state) {
            let out = env_step(&state, &a).unwrap();
            tr.push_step(crate::trajectory::StepRecord::new(t, "", a, out.observation.clone()))
                .unwrap();
            state = out.state;
            t += 1;
        }
        assert_eq!(replay(&cfg, &tr).unwrap(), state);

        let mut other = cfg.clone();
        other.seed = 2;
        assert!(matches!(replay(&other, &tr), Err(EnvError::ReplayMismatch { .. })));
    }
}
