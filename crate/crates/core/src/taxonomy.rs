//! Phase / task / action label universe.
//!
//! The registry is loaded from a declaration file (TOML). The default
//! declaration ships with the crate in `resources/taxonomy.toml` and is
//! available through [`TaxonomyRegistry::builtin`].
//!
//! Labels travel as dot-separated slugs, `phase.task.action`, e.g.
//! `dissection.mucosal_dissection.dissection`.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const BUILTIN_DECLARATION: &str = include_str!("../resources/taxonomy.toml");

/// Granularity of a label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Phase,
    Task,
    Action,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Phase, Level::Task, Level::Action];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Phase => "phase",
            Level::Task => "task",
            Level::Action => "action",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Level {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "phase" => Ok(Level::Phase),
            "task" => Ok(Level::Task),
            "action" => Ok(Level::Action),
            _ => Err(TaxonomyError::UnknownLevel(s.to_string())),
        }
    }
}

macro_rules! ordinal_id {
    ($name:ident) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub(crate) u8);

        impl $name {
            pub fn ordinal(self) -> usize {
                self.0 as usize
            }
        }
    };
}

ordinal_id!(PhaseId);
ordinal_id!(TaskId);
ordinal_id!(ActionId);

/// A validated (phase, task, action) label. Only a [`TaxonomyRegistry`]
/// can construct one, so the task always belongs to the phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    phase: PhaseId,
    task: TaskId,
    action: ActionId,
}

impl Triplet {
    pub fn phase(&self) -> PhaseId {
        self.phase
    }

    pub fn task(&self) -> TaskId {
        self.task
    }

    pub fn action(&self) -> ActionId {
        self.action
    }

    /// Ordinal of this triplet's class at `level`.
    pub fn ordinal(&self, level: Level) -> usize {
        match level {
            Level::Phase => self.phase.ordinal(),
            Level::Task => self.task.ordinal(),
            Level::Action => self.action.ordinal(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaxonomyError {
    #[error("unknown {level} name {text:?}")]
    UnknownName { level: Level, text: String },
    #[error("malformed label {0:?}: expected phase.task.action")]
    MalformedLabel(String),
    #[error("task {task:?} does not belong to phase {phase:?}")]
    HierarchyViolation { phase: String, task: String },
    #[error("{level} ordinal {ordinal} out of range")]
    OrdinalOutOfRange { level: Level, ordinal: usize },
    #[error("unknown level {0:?}")]
    UnknownLevel(String),
    #[error("invalid taxonomy declaration: {0}")]
    Declaration(String),
}

/// Lowercase, spaces to underscores, everything else non-alphanumeric dropped.
pub fn slug(text: &str) -> String {
    text.chars()
        .filter_map(|c| {
            if c == ' ' || c == '_' {
                Some('_')
            } else if c.is_alphanumeric() {
                Some(c)
            } else {
                None
            }
        })
        .flat_map(char::to_lowercase)
        .collect()
}

#[derive(Debug, Deserialize)]
struct Declaration {
    version: u32,
    phases: Vec<String>,
    tasks: Vec<TaskDeclaration>,
    actions: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct TaskDeclaration {
    name: String,
    phase: String,
}

#[derive(Debug, Clone)]
struct LevelNames {
    names: Vec<String>,
    slugs: Vec<String>,
    by_slug: HashMap<String, usize>,
}

impl LevelNames {
    fn new(level: Level, names: Vec<String>) -> Result<Self, TaxonomyError> {
        if names.is_empty() {
            return Err(TaxonomyError::Declaration(format!("no {level} entries")));
        }
        if names.len() > u8::MAX as usize {
            return Err(TaxonomyError::Declaration(format!("too many {level} entries")));
        }
        let slugs: Vec<String> = names.iter().map(|n| slug(n)).collect();
        let mut by_slug = HashMap::with_capacity(slugs.len());
        for (i, s) in slugs.iter().enumerate() {
            if s.is_empty() {
                return Err(TaxonomyError::Declaration(format!("{level} {:?} has an empty slug", names[i])));
            }
            if by_slug.insert(s.clone(), i).is_some() {
                return Err(TaxonomyError::Declaration(format!("duplicate {level} slug {s:?}")));
            }
        }
        Ok(Self { names, slugs, by_slug })
    }

    fn lookup(&self, level: Level, text: &str) -> Result<usize, TaxonomyError> {
        self.by_slug.get(&slug(text)).copied().ok_or_else(|| TaxonomyError::UnknownName {
            level,
            text: text.to_string(),
        })
    }
}

/// The registered label universe plus the task → phase hierarchy.
#[derive(Debug, Clone)]
pub struct TaxonomyRegistry {
    version: u32,
    phases: LevelNames,
    tasks: LevelNames,
    actions: LevelNames,
    phase_of_task: Vec<PhaseId>,
    first_task_of_phase: Vec<TaskId>,
}

impl TaxonomyRegistry {
    /// The declaration shipped with this crate (5 phases, 12 tasks, 21 actions).
    pub fn builtin() -> &'static TaxonomyRegistry {
        static REGISTRY: OnceLock<TaxonomyRegistry> = OnceLock::new();
        REGISTRY.get_or_init(|| {
            TaxonomyRegistry::from_toml(BUILTIN_DECLARATION).expect("builtin taxonomy declaration is valid")
        })
    }

    pub fn load(path: &Path) -> Result<Self, TaxonomyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TaxonomyError::Declaration(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, TaxonomyError> {
        let decl: Declaration = toml::from_str(text).map_err(|e| TaxonomyError::Declaration(e.to_string()))?;
        let phases = LevelNames::new(Level::Phase, decl.phases)?;
        let mut phase_of_task = Vec::with_capacity(decl.tasks.len());
        for t in &decl.tasks {
            let p = phases
                .lookup(Level::Phase, &t.phase)
                .map_err(|_| TaxonomyError::Declaration(format!("task {:?} names unknown phase {:?}", t.name, t.phase)))?;
            phase_of_task.push(PhaseId(p as u8));
        }
        let tasks = LevelNames::new(Level::Task, decl.tasks.into_iter().map(|t| t.name).collect())?;
        let actions = LevelNames::new(Level::Action, decl.actions)?;

        let mut first_task_of_phase = Vec::with_capacity(phases.names.len());
        for p in 0..phases.names.len() {
            let first = phase_of_task
                .iter()
                .position(|ph| ph.ordinal() == p)
                .ok_or_else(|| TaxonomyError::Declaration(format!("phase {:?} owns no task", phases.names[p])))?;
            first_task_of_phase.push(TaskId(first as u8));
        }

        Ok(Self {
            version: decl.version,
            phases,
            tasks,
            actions,
            phase_of_task,
            first_task_of_phase,
        })
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    fn level(&self, level: Level) -> &LevelNames {
        match level {
            Level::Phase => &self.phases,
            Level::Task => &self.tasks,
            Level::Action => &self.actions,
        }
    }

    /// Canonical display names at `level`, in ordinal order.
    pub fn enumerate(&self, level: Level) -> &[String] {
        &self.level(level).names
    }

    pub fn slugs(&self, level: Level) -> &[String] {
        &self.level(level).slugs
    }

    pub fn len(&self, level: Level) -> usize {
        self.level(level).names.len()
    }

    /// Width of the concatenated phase/task/action output vector.
    pub fn output_width(&self) -> usize {
        Level::ALL.iter().map(|&l| self.len(l)).sum()
    }

    pub fn name(&self, level: Level, ordinal: usize) -> Option<&str> {
        self.level(level).names.get(ordinal).map(String::as_str)
    }

    pub fn slug_of(&self, level: Level, ordinal: usize) -> Option<&str> {
        self.level(level).slugs.get(ordinal).map(String::as_str)
    }

    /// Resolve a single name (display form or slug, any case) to its ordinal.
    pub fn resolve(&self, level: Level, text: &str) -> Result<usize, TaxonomyError> {
        self.level(level).lookup(level, text)
    }

    pub fn phase_of(&self, task: TaskId) -> PhaseId {
        self.phase_of_task[task.ordinal()]
    }

    pub fn first_task_of(&self, phase: PhaseId) -> TaskId {
        self.first_task_of_phase[phase.ordinal()]
    }

    /// Build a triplet from ordinals, enforcing the hierarchy.
    pub fn triplet(&self, phase: usize, task: usize, action: usize) -> Result<Triplet, TaxonomyError> {
        for (level, ordinal) in [(Level::Phase, phase), (Level::Task, task), (Level::Action, action)] {
            if ordinal >= self.len(level) {
                return Err(TaxonomyError::OrdinalOutOfRange { level, ordinal });
            }
        }
        let t = Triplet {
            phase: PhaseId(phase as u8),
            task: TaskId(task as u8),
            action: ActionId(action as u8),
        };
        if self.phase_of(t.task) != t.phase {
            return Err(TaxonomyError::HierarchyViolation {
                phase: self.phases.names[phase].clone(),
                task: self.tasks.names[task].clone(),
            });
        }
        Ok(t)
    }

    /// Like [`triplet`](Self::triplet), but a task outside its phase is
    /// replaced by the phase's first task. The flag reports a repair.
    pub fn repaired_triplet(&self, phase: usize, task: usize, action: usize) -> Result<(Triplet, bool), TaxonomyError> {
        match self.triplet(phase, task, action) {
            Ok(t) => Ok((t, false)),
            Err(TaxonomyError::HierarchyViolation { .. }) => {
                let first = self.first_task_of(PhaseId(phase as u8));
                Ok((self.triplet(phase, first.ordinal(), action)?, true))
            }
            Err(e) => Err(e),
        }
    }

    pub fn parse_triplet(&self, label: &str) -> Result<Triplet, TaxonomyError> {
        let parts: Vec<&str> = label.split('.').collect();
        if parts.len() != 3 {
            return Err(TaxonomyError::MalformedLabel(label.to_string()));
        }
        let phase = self.resolve(Level::Phase, parts[0])?;
        let task = self.resolve(Level::Task, parts[1])?;
        let action = self.resolve(Level::Action, parts[2])?;
        self.triplet(phase, task, action)
    }

    pub fn format_triplet(&self, t: &Triplet) -> String {
        format!(
            "{}.{}.{}",
            self.phases.slugs[t.phase.ordinal()],
            self.tasks.slugs[t.task.ordinal()],
            self.actions.slugs[t.action.ordinal()]
        )
    }

    /// Every valid triplet, in (phase, task, action) ordinal order.
    pub fn all_triplets(&self) -> Vec<Triplet> {
        let mut out = Vec::new();
        for task in 0..self.tasks.names.len() {
            let phase = self.phase_of_task[task].ordinal();
            for action in 0..self.actions.names.len() {
                out.push(self.triplet(phase, task, action).expect("hierarchy-consistent by construction"));
            }
        }
        out.sort();
        out
    }
}
