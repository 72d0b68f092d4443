//! A seeded toy corpus: template sentences over eight entity types with
//! closed name pools, small enough for the toy model to memorize.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::data::{tid, AnnotatedSentence, Sentence, TypeId, TypedMention};
use crate::rng;

pub const TYPES: [&str; 8] = ["person", "city", "country", "company", "team", "film", "date", "product"];

const PEOPLE: &[&str] = &[
    "Alice Moore", "Ben Carter", "Chen Wei", "Dana Ortiz", "Elif Kaya", "Femi Adeyemi", "Greta Lind", "Hiro Sato",
    "Ines Duarte", "Jonas Berg", "Kara Singh", "Luca Romano",
];
const CITIES: &[&str] = &["Lyon", "Osaka", "Porto", "Quito", "Riga", "Tampere", "Utrecht", "Valencia", "Windhoek", "Zagreb"];
const COUNTRIES: &[&str] = &["Chile", "Norway", "Kenya", "Vietnam", "Peru", "Austria", "Ghana", "Mongolia", "Uruguay", "Estonia"];
const COMPANIES: &[&str] = &[
    "Norvik Labs", "Helio Systems", "Quanta Foods", "Brightwave", "Altera Motors", "Solent Bank", "Marlow Steel", "Vexa",
    "Corvid Media", "Tessel Group",
];
const TEAMS: &[&str] = &[
    "Red Falcons", "Harbor United", "Iron Wolves", "Blue Comets", "River Kings", "Storm Riders", "Green Owls", "Night Hawks",
];
const FILMS: &[&str] = &[
    "Silent Harbor", "Glass Garden", "The Last Orbit", "Paper Moons", "Winter Road", "Hidden Tides", "Ember Lake", "Velvet Sky",
];
const DATES: &[&str] = &[
    "March 2004", "June 2011", "May 1998", "October 2015", "January 2020", "August 2007", "April 1989", "July 2013",
    "last year", "two weeks ago",
];
const PRODUCTS: &[&str] = &["Zephyr X2", "Nimbus Pad", "Orca Drive", "Lumen Watch", "Pixel Forge", "Atlas Phone", "Kite Pro", "Echo Dot"];

fn pool(t: &str) -> &'static [&'static str] {
    match t {
        "person" => PEOPLE,
        "city" => CITIES,
        "country" => COUNTRIES,
        "company" => COMPANIES,
        "team" => TEAMS,
        "film" => FILMS,
        "date" => DATES,
        "product" => PRODUCTS,
        _ => unreachable!("unknown synthetic type {t}"),
    }
}

/// Sentence templates; `{type}` slots are filled from the pools.
const TEMPLATES: &[&str] = &[
    "{person} moved to {city} in {date}.",
    "{person} was born in {country}.",
    "{company} opened an office in {city}.",
    "{person} joined {company} as an engineer.",
    "The {team} won the final against the {team2}.",
    "{person} starred in {film}.",
    "{film} was filmed in {country} in {date}.",
    "{company} released the {product} in {date}.",
    "{person} reviewed the {product} for a magazine.",
    "Fans of the {team} gathered in {city}.",
    "{person} met {person2} in {city}.",
    "{company} sponsors the {team}.",
    "The premiere of {film} took place in {city}.",
    "{person} founded {company} in {country}.",
    "Sales of the {product} rose in {country}.",
    "{person} coached the {team} until {date}.",
    "The {product} is made by {company}.",
    "{person} directed {film} with {person2}.",
    "In {date} the {team} moved to {city}.",
    "{person} visited {country} and {city}.",
];

/// Sentences `syn-000` ... over exactly the eight [`TYPES`], one type per
/// mention, no repeated text.
pub fn corpus(n: usize, seed: u64) -> Vec<AnnotatedSentence> {
    let mut rng = rng::keyed(seed, "synthetic", 0);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n {
        attempts += 1;
        assert!(attempts < n * 1000, "template space too small for {n} distinct sentences");
        let template = *TEMPLATES.choose(&mut rng).expect("templates");
        let mut text = String::new();
        let mut mentions: Vec<(String, &str)> = Vec::new();
        let mut rest = template;
        while let Some(open) = rest.find('{') {
            text.push_str(&rest[..open]);
            let close = open + rest[open..].find('}').expect("closed slot");
            let slot = &rest[open + 1..close];
            let t = slot.trim_end_matches(|c: char| c.is_ascii_digit());
            let surface = loop {
                let candidate = pool(t)[rng.random_range(0..pool(t).len())];
                if !mentions.iter().any(|(s, _)| s == candidate) {
                    break candidate;
                }
            };
            text.push_str(surface);
            mentions.push((surface.to_string(), t));
            rest = &rest[close + 1..];
        }
        text.push_str(rest);
        if !seen.insert(text.clone()) {
            continue;
        }
        let sentence = Sentence::new(format!("syn-{:03}", out.len()), text).expect("non-empty");
        let typed = mentions
            .into_iter()
            .map(|(s, t)| TypedMention::new(s, vec![tid(t)]).expect("valid mention"))
            .collect();
        out.push(AnnotatedSentence::ordered(sentence, typed).expect("surfaces occur"));
    }
    out
}

pub fn schema() -> Vec<TypeId> {
    TYPES.iter().map(|t| tid(t)).collect()
}
