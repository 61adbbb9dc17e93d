use super::Vocabulary;

pub const MAX_ROOMS: usize = 8;
pub const MAX_OBJECTS: usize = 12;

pub const DENSE_VERBS: [&str; 5] = ["focus on", "pick up", "examine", "activate", "measure"];

const ROOMS: [&str; MAX_ROOMS] = [
    "kitchen",
    "living room",
    "bedroom",
    "bathroom",
    "hallway",
    "greenhouse",
    "laboratory",
    "workshop",
];
const ROOMS_SHIFTED: [&str; MAX_ROOMS] = [
    "observatory",
    "cellar",
    "attic",
    "studio",
    "foundry",
    "library",
    "conservatory",
    "atrium",
];

const RECEPTACLES: [&str; MAX_ROOMS] = [
    "shelf",
    "cabinet",
    "countertop",
    "drawer",
    "table",
    "desk",
    "dresser",
    "stand",
];
const RECEPTACLES_SHIFTED: [&str; MAX_ROOMS] = [
    "yellow box",
    "purple box",
    "crate",
    "locker",
    "rack",
    "tray",
    "chest",
    "pedestal",
];

const OBJECTS: [&str; MAX_OBJECTS] = [
    "tomato",
    "mug",
    "apple",
    "thermometer",
    "lettuce",
    "book",
    "key",
    "plate",
    "battery",
    "lamp",
    "potato",
    "bowl",
];
const OBJECTS_SHIFTED: [&str; MAX_OBJECTS] = [
    "beaker",
    "magnet",
    "seed packet",
    "compass",
    "crystal",
    "flask",
    "lens",
    "prism",
    "fuse",
    "bulb",
    "spool",
    "vial",
];

/// Names a drifting agent hallucinates. None of them exists in any world.
pub const GHOSTS: [&str; 6] = [
    "silver thermometer",
    "unknown substance b",
    "blue notebook",
    "glass key",
    "red wire",
    "spare battery pack",
];

pub fn rooms(v: Vocabulary) -> &'static [&'static str] {
    match v {
        Vocabulary::Standard => &ROOMS,
        Vocabulary::Shifted => &ROOMS_SHIFTED,
    }
}

pub fn receptacles(v: Vocabulary) -> &'static [&'static str] {
    match v {
        Vocabulary::Standard => &RECEPTACLES,
        Vocabulary::Shifted => &RECEPTACLES_SHIFTED,
    }
}

pub fn objects(v: Vocabulary) -> &'static [&'static str] {
    match v {
        Vocabulary::Standard => &OBJECTS,
        Vocabulary::Shifted => &OBJECTS_SHIFTED,
    }
}
