//! Parser for the two-agent `.dpomdp` text format.
//!
//! The format follows the Cassandra POMDP conventions extended to two agents:
//! a preamble (`agents`, `discount`, `values`, `states`, `actions`,
//! `observations`, `start`) followed by `T:`/`O:`/`R:` directives. Directives
//! may give a single entry, a row, or a full matrix (disambiguated by the
//! number of `:`-separated fields), use `*` wildcards per agent or per state,
//! and the keywords `uniform` and `identity`. Later directives overwrite
//! earlier ones. Rewards may be scoped on end state and observations; they are
//! reduced to `R(s, a, b)` by expectation under the transition and observation
//! tables once those are known.

use super::DecPomdpModel;
use crate::error::{Error, Result};

const KEYWORDS: [&str; 10] = [
    "agents",
    "discount",
    "values",
    "states",
    "actions",
    "observations",
    "start",
    "t",
    "o",
    "r",
];

/// One logical statement: a keyword line plus its continuation lines.
struct Stmt {
    line_no: usize,
    keyword: String,
    lines: Vec<String>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Scope {
    All,
    One(usize),
}

impl Scope {
    fn iter(&self, n: usize) -> Box<dyn Iterator<Item = usize>> {
        match *self {
            Scope::All => Box::new(0..n),
            Scope::One(i) => Box::new(std::iter::once(i)),
        }
    }
}

struct RewardDirective {
    a: Scope,
    b: Scope,
    s: Scope,
    s2: Scope,
    y: Scope,
    z: Scope,
    value: f64,
}

fn err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn starts_statement(line: &str) -> Option<String> {
    if !line.contains(':') {
        return None;
    }
    let first: &str = line
        .split(|c: char| c == ':' || c.is_whitespace())
        .next()
        .unwrap_or("");
    let lower = first.to_ascii_lowercase();
    KEYWORDS.contains(&lower.as_str()).then_some(lower)
}

fn split_statements(text: &str) -> Result<Vec<Stmt>> {
    let mut stmts: Vec<Stmt> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        if let Some(keyword) = starts_statement(line) {
            stmts.push(Stmt {
                line_no: i + 1,
                keyword,
                lines: vec![line.to_string()],
            });
        } else if let Some(last) = stmts.last_mut() {
            last.lines.push(line.to_string());
        } else {
            return Err(err(i + 1, format!("expected a keyword directive, got `{line}`")));
        }
    }
    Ok(stmts)
}

impl Stmt {
    /// All text after the first `:`, joined across lines.
    fn tail(&self) -> String {
        let mut joined = self.lines.join("\n");
        if let Some(i) = joined.find(':') {
            joined = joined[i + 1..].to_string();
        }
        joined
    }

    /// Tokens after the first `:`, flattened across lines.
    fn tail_tokens(&self) -> Vec<String> {
        self.tail().split_whitespace().map(str::to_string).collect()
    }

    /// Non-empty content rows after the keyword line's `:` (one per line).
    fn tail_rows(&self) -> Vec<String> {
        let mut rows = Vec::new();
        for (i, line) in self.lines.iter().enumerate() {
            let content = if i == 0 {
                match line.find(':') {
                    Some(j) => line[j + 1..].trim(),
                    None => "",
                }
            } else {
                line.trim()
            };
            if !content.is_empty() {
                rows.push(content.to_string());
            }
        }
        rows
    }

    /// `:`-separated fields (after the keyword itself), each tokenized.
    fn fields(&self) -> Vec<Vec<String>> {
        let joined = self.lines.join("\n");
        let mut parts: Vec<Vec<String>> = joined
            .split(':')
            .map(|f| f.split_whitespace().map(str::to_string).collect())
            .collect();
        parts.remove(0); // the keyword
        parts
    }

    /// The token on the keyword line after `start`, e.g. `include`/`exclude`.
    fn start_modifier(&self) -> Option<String> {
        let head = self.lines[0].split(':').next().unwrap_or("");
        head.split_whitespace().nth(1).map(|s| s.to_ascii_lowercase())
    }
}

/// Resolves a state/action/observation id: a declared name, a numeric index,
/// or the wildcard `*`.
fn resolve(token: &str, names: &[String], what: &str, line: usize) -> Result<Scope> {
    if token == "*" {
        return Ok(Scope::All);
    }
    if let Some(i) = names.iter().position(|n| n == token) {
        return Ok(Scope::One(i));
    }
    if let Ok(i) = token.parse::<usize>() {
        if i < names.len() {
            return Ok(Scope::One(i));
        }
        return Err(err(line, format!("{what} index {i} out of range (have {})", names.len())));
    }
    Err(err(line, format!("unknown {what} `{token}`")))
}

fn parse_number(token: &str, line: usize) -> Result<f64> {
    token
        .parse::<f64>()
        .map_err(|_| err(line, format!("expected a number, got `{token}`")))
}

fn parse_numbers(tokens: &[String], expect: usize, line: usize, what: &str) -> Result<Vec<f64>> {
    if tokens.len() != expect {
        return Err(err(
            line,
            format!("{what}: expected {expect} numbers, got {}", tokens.len()),
        ));
    }
    tokens.iter().map(|t| parse_number(t, line)).collect()
}

/// Names declared either as a count (`states: 4`) or as a list of names.
fn name_list(tokens: &[String], prefix: &str, line: usize) -> Result<Vec<String>> {
    if tokens.is_empty() {
        return Err(err(line, format!("empty `{prefix}` declaration")));
    }
    if tokens.len() == 1 {
        if let Ok(n) = tokens[0].parse::<usize>() {
            if n == 0 {
                return Err(err(line, format!("`{prefix}` count must be positive")));
            }
            return Ok((0..n).map(|i| format!("{prefix}{i}")).collect());
        }
    }
    Ok(tokens.to_vec())
}

/// Splits a directive's leading field into the per-agent id pair plus any
/// payload tokens that spilled into the same field. A lone `*` covers both
/// agents.
fn action_pair(field: &[String], line: usize) -> Result<(String, String, Vec<String>)> {
    if field.is_empty() {
        return Err(err(line, "missing action pair"));
    }
    if field[0] == "*" {
        let payload_follows = field.len() == 1
            || field[1].parse::<f64>().is_ok()
            || field[1] == "uniform"
            || field[1] == "identity";
        if payload_follows {
            return Ok(("*".into(), "*".into(), field[1..].to_vec()));
        }
    }
    if field.len() < 2 {
        return Err(err(line, "expected two action ids (or a single `*`)"));
    }
    Ok((field[0].clone(), field[1].clone(), field[2..].to_vec()))
}

/// Same convention for the joint-observation field of `O:`/`R:` directives.
fn obs_pair(field: &[String], line: usize) -> Result<(String, String, Vec<String>)> {
    action_pair(field, line).map_err(|_| err(line, "expected two observation ids (or a single `*`)"))
}

struct Preamble {
    agents: Option<usize>,
    discount: Option<f64>,
    cost: bool,
    states: Option<Vec<String>>,
    actions: Option<[Vec<String>; 2]>,
    observations: Option<[Vec<String>; 2]>,
    start: Option<Stmt>,
}

/// Parses `.dpomdp` text into a model. Probability rows are kept as written;
/// `DecPomdpModel::validate` performs tolerance checks and renormalization.
pub fn parse_dpomdp(text: &str) -> Result<DecPomdpModel> {
    let stmts = split_statements(text)?;
    let mut pre = Preamble {
        agents: None,
        discount: None,
        cost: false,
        states: None,
        actions: None,
        observations: None,
        start: None,
    };
    let mut body: Vec<Stmt> = Vec::new();

    for stmt in stmts {
        let line = stmt.line_no;
        match stmt.keyword.as_str() {
            "agents" => {
                let toks = stmt.tail_tokens();
                let n = toks
                    .first()
                    .and_then(|t| t.parse::<usize>().ok())
                    .ok_or_else(|| err(line, "expected an agent count"))?;
                pre.agents = Some(n);
            }
            "discount" => {
                let toks = stmt.tail_tokens();
                let g = toks
                    .first()
                    .ok_or_else(|| err(line, "expected a discount factor"))?;
                pre.discount = Some(parse_number(g, line)?);
            }
            "values" => {
                let toks = stmt.tail_tokens();
                match toks.first().map(|s| s.to_ascii_lowercase()).as_deref() {
                    Some("reward") => pre.cost = false,
                    Some("cost") => pre.cost = true,
                    other => {
                        return Err(err(
                            line,
                            format!("values must be `reward` or `cost`, got {other:?}"),
                        ))
                    }
                }
            }
            "states" => pre.states = Some(name_list(&stmt.tail_tokens(), "s", line)?),
            "actions" | "observations" => {
                let rows = stmt.tail_rows();
                if rows.len() != 2 {
                    return Err(err(
                        line,
                        format!("`{}` needs one line per agent (2), got {}", stmt.keyword, rows.len()),
                    ));
                }
                let prefix_base = if stmt.keyword == "actions" { "a" } else { "o" };
                let mut lists: Vec<Vec<String>> = Vec::with_capacity(2);
                for (agent, row) in rows.iter().enumerate() {
                    let toks: Vec<String> = row.split_whitespace().map(str::to_string).collect();
                    lists.push(name_list(&toks, &format!("{prefix_base}{}", agent + 1), line)?);
                }
                let pair = [lists.remove(0), lists.remove(0)];
                if stmt.keyword == "actions" {
                    pre.actions = Some(pair);
                } else {
                    pre.observations = Some(pair);
                }
            }
            "start" => pre.start = Some(stmt),
            _ => body.push(stmt),
        }
    }

    match pre.agents {
        Some(2) => {}
        Some(n) => {
            return Err(Error::InvalidModel(format!(
                "this solver handles exactly 2 agents, file declares {n}"
            )))
        }
        None => return Err(Error::InvalidModel("missing `agents:` declaration".into())),
    }
    let discount = pre
        .discount
        .ok_or_else(|| Error::InvalidModel("missing `discount:` declaration".into()))?;
    let state_names = pre
        .states
        .ok_or_else(|| Error::InvalidModel("missing `states:` declaration".into()))?;
    let action_names = pre
        .actions
        .ok_or_else(|| Error::InvalidModel("missing `actions:` declaration".into()))?;
    let obs_names = pre
        .observations
        .ok_or_else(|| Error::InvalidModel("missing `observations:` declaration".into()))?;

    let mut m = DecPomdpModel::zeroed("model", discount, state_names, action_names, obs_names);
    let d = m.dims();
    let (ns, na, nb) = (d.states, d.actions[0], d.actions[1]);
    let (ny, nz) = (d.obs[0], d.obs[1]);

    // Start distribution.
    match &pre.start {
        None => m.start.fill(1.0 / ns as f64),
        Some(stmt) => {
            let line = stmt.line_no;
            let toks = stmt.tail_tokens();
            match stmt.start_modifier().as_deref() {
                Some("include") | Some("exclude") => {
                    let exclude = stmt.start_modifier().as_deref() == Some("exclude");
                    let mut member = vec![exclude; ns];
                    for t in &toks {
                        match resolve(t, &m.state_names, "state", line)? {
                            Scope::One(i) => member[i] = !exclude,
                            Scope::All => {
                                return Err(err(line, "`*` not allowed in start include/exclude"))
                            }
                        }
                    }
                    let k = member.iter().filter(|&&x| x).count();
                    if k == 0 {
                        return Err(err(line, "start set is empty"));
                    }
                    for (i, &inc) in member.iter().enumerate() {
                        m.start[i] = if inc { 1.0 / k as f64 } else { 0.0 };
                    }
                }
                _ => {
                    if toks.len() == 1 && toks[0].eq_ignore_ascii_case("uniform") {
                        m.start.fill(1.0 / ns as f64);
                    } else if toks.len() == ns && toks.iter().all(|t| t.parse::<f64>().is_ok()) {
                        for (i, t) in toks.iter().enumerate() {
                            m.start[i] = parse_number(t, line)?;
                        }
                    } else if toks.len() == 1 {
                        match resolve(&toks[0], &m.state_names, "state", line)? {
                            Scope::One(i) => m.start[i] = 1.0,
                            Scope::All => return Err(err(line, "`*` is not a start state")),
                        }
                    } else {
                        return Err(err(
                            line,
                            format!("start needs {ns} probabilities, a state, or `uniform`"),
                        ));
                    }
                }
            }
        }
    }

    // T and O directives, applied in file order (later entries overwrite).
    let mut rewards: Vec<RewardDirective> = Vec::new();
    for stmt in &body {
        let line = stmt.line_no;
        let mut fields = stmt.fields();
        if fields.is_empty() {
            return Err(err(line, "empty directive"));
        }
        let (a_tok, b_tok, mut payload) = action_pair(&fields[0], line)?;
        // `uniform`/`identity` often sit in a field of their own (the usual
        // layout puts them on a continuation line after `T: * :`). Fold such
        // a trailing keyword field into the payload so the arity match below
        // sees the scope fields only.
        if matches!(stmt.keyword.as_str(), "t" | "o")
            && fields.len() > 1
            && payload.is_empty()
            && fields
                .last()
                .is_some_and(|f| f.len() == 1 && matches!(f[0].as_str(), "uniform" | "identity"))
        {
            payload = fields.pop().unwrap();
        }
        let a_scope = resolve(&a_tok, &m.action_names[0], "agent-1 action", line)?;
        let b_scope = resolve(&b_tok, &m.action_names[1], "agent-2 action", line)?;

        match stmt.keyword.as_str() {
            "t" => match fields.len() {
                1 => {
                    // Matrix or keyword form over all (s, s').
                    if payload.len() == 1 && payload[0] == "uniform" {
                        for a in a_scope.iter(na) {
                            for b in b_scope.iter(nb) {
                                for s in 0..ns {
                                    for s2 in 0..ns {
                                        m.set_t(s, a, b, s2, 1.0 / ns as f64);
                                    }
                                }
                            }
                        }
                    } else if payload.len() == 1 && payload[0] == "identity" {
                        for a in a_scope.iter(na) {
                            for b in b_scope.iter(nb) {
                                for s in 0..ns {
                                    for s2 in 0..ns {
                                        m.set_t(s, a, b, s2, f64::from(s == s2));
                                    }
                                }
                            }
                        }
                    } else {
                        let vals = parse_numbers(&payload, ns * ns, line, "T matrix")?;
                        for a in a_scope.iter(na) {
                            for b in b_scope.iter(nb) {
                                for s in 0..ns {
                                    for s2 in 0..ns {
                                        m.set_t(s, a, b, s2, vals[s * ns + s2]);
                                    }
                                }
                            }
                        }
                    }
                }
                2 => {
                    // Row form `T: a b : s` (row inline or on continuation
                    // lines), or a full matrix whose rows follow a trailing
                    // colon on the keyword line.
                    let row_form = resolve(&fields[1][0], &m.state_names, "state", line).is_ok()
                        && (fields[1].len() - 1 + payload.len() == ns
                            || fields[1].get(1).map(String::as_str) == Some("uniform")
                            || (fields[1].len() == 1
                                && payload.first().map(String::as_str) == Some("uniform")));
                    if row_form {
                        let s_scope = resolve(&fields[1][0], &m.state_names, "state", line)?;
                        payload.extend_from_slice(&fields[1][1..]);
                        let vals = if payload.len() == 1 && payload[0] == "uniform" {
                            vec![1.0 / ns as f64; ns]
                        } else {
                            parse_numbers(&payload, ns, line, "T row")?
                        };
                        for a in a_scope.iter(na) {
                            for b in b_scope.iter(nb) {
                                for s in s_scope.iter(ns) {
                                    for s2 in 0..ns {
                                        m.set_t(s, a, b, s2, vals[s2]);
                                    }
                                }
                            }
                        }
                    } else {
                        payload.extend_from_slice(&fields[1]);
                        let vals = parse_numbers(&payload, ns * ns, line, "T matrix")?;
                        for a in a_scope.iter(na) {
                            for b in b_scope.iter(nb) {
                                for s in 0..ns {
                                    for s2 in 0..ns {
                                        m.set_t(s, a, b, s2, vals[s * ns + s2]);
                                    }
                                }
                            }
                        }
                    }
                }
                3 | 4 => {
                    let s_scope = resolve(&fields[1][0], &m.state_names, "state", line)?;
                    // Single entry `T: a b : s : s' : p`, or a row behind a
                    // second colon: `T: a b : s : <ns numbers>`.
                    let row_form = fields.len() == 3
                        && resolve(&fields[2][0], &m.state_names, "end state", line).is_err()
                        && fields[2].len() + payload.len() == ns;
                    if row_form {
                        payload.extend_from_slice(&fields[2]);
                        let vals = parse_numbers(&payload, ns, line, "T row")?;
                        for a in a_scope.iter(na) {
                            for b in b_scope.iter(nb) {
                                for s in s_scope.iter(ns) {
                                    for s2 in 0..ns {
                                        m.set_t(s, a, b, s2, vals[s2]);
                                    }
                                }
                            }
                        }
                    } else {
                        let s2_scope =
                            resolve(&fields[2][0], &m.state_names, "end state", line)?;
                        payload.extend_from_slice(&fields[2][1..]);
                        if fields.len() == 4 {
                            payload.extend_from_slice(&fields[3]);
                        }
                        let p = parse_numbers(&payload, 1, line, "T entry")?[0];
                        for a in a_scope.iter(na) {
                            for b in b_scope.iter(nb) {
                                for s in s_scope.iter(ns) {
                                    for s2 in s2_scope.iter(ns) {
                                        m.set_t(s, a, b, s2, p);
                                    }
                                }
                            }
                        }
                    }
                }
                n => return Err(err(line, format!("T directive with {n} fields"))),
            },
            "o" => match fields.len() {
                1 => {
                    if payload.len() == 1 && payload[0] == "uniform" {
                        let u = 1.0 / (ny * nz) as f64;
                        for a in a_scope.iter(na) {
                            for b in b_scope.iter(nb) {
                                for s2 in 0..ns {
                                    for y in 0..ny {
                                        for z in 0..nz {
                                            m.set_o(s2, a, b, y, z, u);
                                        }
                                    }
                                }
                            }
                        }
                    } else {
                        let vals = parse_numbers(&payload, ns * ny * nz, line, "O matrix")?;
                        for a in a_scope.iter(na) {
                            for b in b_scope.iter(nb) {
                                for s2 in 0..ns {
                                    for y in 0..ny {
                                        for z in 0..nz {
                                            m.set_o(s2, a, b, y, z, vals[(s2 * ny + y) * nz + z]);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                2 => {
                    // Row form `O: a b : s'` (row inline or on continuation
                    // lines), or a full matrix over (s', joint observation)
                    // behind a trailing colon.
                    let row_form = resolve(&fields[1][0], &m.state_names, "end state", line)
                        .is_ok()
                        && (fields[1].len() - 1 + payload.len() == ny * nz
                            || fields[1].get(1).map(String::as_str) == Some("uniform")
                            || (fields[1].len() == 1
                                && payload.first().map(String::as_str) == Some("uniform")));
                    if row_form {
                        let s2_scope =
                            resolve(&fields[1][0], &m.state_names, "end state", line)?;
                        payload.extend_from_slice(&fields[1][1..]);
                        if payload.len() == 1 && payload[0] == "uniform" {
                            let u = 1.0 / (ny * nz) as f64;
                            for a in a_scope.iter(na) {
                                for b in b_scope.iter(nb) {
                                    for s2 in s2_scope.iter(ns) {
                                        for y in 0..ny {
                                            for z in 0..nz {
                                                m.set_o(s2, a, b, y, z, u);
                                            }
                                        }
                                    }
                                }
                            }
                        } else {
                            let vals = parse_numbers(&payload, ny * nz, line, "O row")?;
                            for a in a_scope.iter(na) {
                                for b in b_scope.iter(nb) {
                                    for s2 in s2_scope.iter(ns) {
                                        for y in 0..ny {
                                            for z in 0..nz {
                                                m.set_o(s2, a, b, y, z, vals[y * nz + z]);
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    } else {
                        payload.extend_from_slice(&fields[1]);
                        let vals = parse_numbers(&payload, ns * ny * nz, line, "O matrix")?;
                        for a in a_scope.iter(na) {
                            for b in b_scope.iter(nb) {
                                for s2 in 0..ns {
                                    for y in 0..ny {
                                        for z in 0..nz {
                                            m.set_o(s2, a, b, y, z, vals[(s2 * ny + y) * nz + z]);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                3 | 4 => {
                    let s2_scope = resolve(&fields[1][0], &m.state_names, "end state", line)?;
                    // Single entry `O: a b : s' : y z : p`, or a row behind a
                    // second colon: `O: a b : s' : <ny·nz numbers>`.
                    let row_form = fields.len() == 3
                        && fields[2].len() + payload.len() == ny * nz
                        && fields[2]
                            .first()
                            .is_some_and(|t| resolve(t, &m.obs_names[0], "o", line).is_err());
                    if row_form {
                        payload.extend_from_slice(&fields[2]);
                        let vals = parse_numbers(&payload, ny * nz, line, "O row")?;
                        for a in a_scope.iter(na) {
                            for b in b_scope.iter(nb) {
                                for s2 in s2_scope.iter(ns) {
                                    for y in 0..ny {
                                        for z in 0..nz {
                                            m.set_o(s2, a, b, y, z, vals[y * nz + z]);
                                        }
                                    }
                                }
                            }
                        }
                    } else {
                        let (y_tok, z_tok, spill) = obs_pair(&fields[2], line)?;
                        let y_scope =
                            resolve(&y_tok, &m.obs_names[0], "agent-1 observation", line)?;
                        let z_scope =
                            resolve(&z_tok, &m.obs_names[1], "agent-2 observation", line)?;
                        payload.extend_from_slice(&spill);
                        if fields.len() == 4 {
                            payload.extend_from_slice(&fields[3]);
                        }
                        let p = parse_numbers(&payload, 1, line, "O entry")?[0];
                        for a in a_scope.iter(na) {
                            for b in b_scope.iter(nb) {
                                for s2 in s2_scope.iter(ns) {
                                    for y in y_scope.iter(ny) {
                                        for z in z_scope.iter(nz) {
                                            m.set_o(s2, a, b, y, z, p);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                n => return Err(err(line, format!("O directive with {n} fields"))),
            },
            "r" => {
                // Emits one directive per concrete (s', y, z) cell when the
                // payload is a row/matrix; scoped wildcards otherwise.
                let mut push_matrix = |s_scope: Scope, vals: &[f64]| {
                    for s2 in 0..ns {
                        for y in 0..ny {
                            for z in 0..nz {
                                rewards.push(RewardDirective {
                                    a: a_scope,
                                    b: b_scope,
                                    s: s_scope,
                                    s2: Scope::One(s2),
                                    y: Scope::One(y),
                                    z: Scope::One(z),
                                    value: vals[(s2 * ny + y) * nz + z],
                                });
                            }
                        }
                    }
                };
                match fields.len() {
                    2 => {
                        // `R: a b : s` + matrix over (s', joint obs).
                        let s_scope = resolve(&fields[1][0], &m.state_names, "state", line)?;
                        payload.extend_from_slice(&fields[1][1..]);
                        let vals = parse_numbers(&payload, ns * ny * nz, line, "R matrix")?;
                        push_matrix(s_scope, &vals);
                    }
                    3 => {
                        let s_scope = resolve(&fields[1][0], &m.state_names, "state", line)?;
                        payload.extend_from_slice(&fields[2]);
                        // `R: a b : s : s'` + row over joint obs, or the same
                        // matrix as above behind one more colon.
                        let as_row = payload.len() == 1 + ny * nz
                            && resolve(&payload[0], &m.state_names, "end state", line).is_ok();
                        if as_row {
                            let s2_scope =
                                resolve(&payload[0], &m.state_names, "end state", line)?;
                            let vals = parse_numbers(&payload[1..], ny * nz, line, "R row")?;
                            for y in 0..ny {
                                for z in 0..nz {
                                    rewards.push(RewardDirective {
                                        a: a_scope,
                                        b: b_scope,
                                        s: s_scope,
                                        s2: s2_scope,
                                        y: Scope::One(y),
                                        z: Scope::One(z),
                                        value: vals[y * nz + z],
                                    });
                                }
                            }
                        } else {
                            let vals = parse_numbers(&payload, ns * ny * nz, line, "R matrix")?;
                            push_matrix(s_scope, &vals);
                        }
                    }
                    4 => {
                        let s_scope = resolve(&fields[1][0], &m.state_names, "state", line)?;
                        let s2_scope = resolve(&fields[2][0], &m.state_names, "end state", line)?;
                        payload.extend_from_slice(&fields[2][1..]);
                        payload.extend_from_slice(&fields[3]);
                        // `y z value` (a single scoped entry), a row of one
                        // value per joint observation, or a lone value that
                        // applies across all observations.
                        let as_single = payload.len() == 3
                            && resolve(&payload[0], &m.obs_names[0], "o", line).is_ok()
                            && resolve(&payload[1], &m.obs_names[1], "o", line).is_ok()
                            && !(ny * nz == 3 && payload.iter().all(|t| t.parse::<f64>().is_ok()));
                        if as_single {
                            let y_scope = resolve(&payload[0], &m.obs_names[0], "agent-1 observation", line)?;
                            let z_scope = resolve(&payload[1], &m.obs_names[1], "agent-2 observation", line)?;
                            let v = parse_number(&payload[2], line)?;
                            rewards.push(RewardDirective {
                                a: a_scope,
                                b: b_scope,
                                s: s_scope,
                                s2: s2_scope,
                                y: y_scope,
                                z: z_scope,
                                value: v,
                            });
                        } else if payload.len() == 1 && ny * nz != 1 {
                            let v = parse_number(&payload[0], line)?;
                            rewards.push(RewardDirective {
                                a: a_scope,
                                b: b_scope,
                                s: s_scope,
                                s2: s2_scope,
                                y: Scope::All,
                                z: Scope::All,
                                value: v,
                            });
                        } else {
                            let vals = parse_numbers(&payload, ny * nz, line, "R row")?;
                            for y in 0..ny {
                                for z in 0..nz {
                                    rewards.push(RewardDirective {
                                        a: a_scope,
                                        b: b_scope,
                                        s: s_scope,
                                        s2: s2_scope,
                                        y: Scope::One(y),
                                        z: Scope::One(z),
                                        value: vals[y * nz + z],
                                    });
                                }
                            }
                        }
                    }
                    5 | 6 => {
                        let s_scope = resolve(&fields[1][0], &m.state_names, "state", line)?;
                        let s2_scope = resolve(&fields[2][0], &m.state_names, "end state", line)?;
                        let (y_tok, z_tok, spill) = obs_pair(&fields[3], line)?;
                        let y_scope = resolve(&y_tok, &m.obs_names[0], "agent-1 observation", line)?;
                        let z_scope = resolve(&z_tok, &m.obs_names[1], "agent-2 observation", line)?;
                        payload.extend_from_slice(&spill);
                        for f in &fields[4..] {
                            payload.extend_from_slice(f);
                        }
                        let v = parse_numbers(&payload, 1, line, "R entry")?[0];
                        rewards.push(RewardDirective {
                            a: a_scope,
                            b: b_scope,
                            s: s_scope,
                            s2: s2_scope,
                            y: y_scope,
                            z: z_scope,
                            value: v,
                        });
                    }
                    n => return Err(err(line, format!("R directive with {n} fields"))),
                }
            }
            _ => unreachable!(),
        }
    }

    reduce_rewards(&mut m, &rewards);
    if pre.cost {
        for v in m.reward.iter_mut() {
            *v = -*v;
        }
    }
    Ok(m)
}

/// Collapses end-state/observation-scoped reward directives into `R(s, a, b)`
/// by expectation under `T` and `O` (normalizing by the row mass so that
/// slightly unnormalized rows behave as their renormalized versions).
fn reduce_rewards(m: &mut DecPomdpModel, directives: &[RewardDirective]) {
    let d = m.dims();
    let (ns, na, nb) = (d.states, d.actions[0], d.actions[1]);
    let (ny, nz) = (d.obs[0], d.obs[1]);

    // Bucket directives by concrete (a, b) to keep the scan per cell short.
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); na * nb];
    for (i, rd) in directives.iter().enumerate() {
        for a in rd.a.iter(na) {
            for b in rd.b.iter(nb) {
                buckets[a * nb + b].push(i);
            }
        }
    }

    let mut slice = vec![0.0; ns * ny * nz];
    for a in 0..na {
        for b in 0..nb {
            let bucket = &buckets[a * nb + b];
            for s in 0..ns {
                let applicable: Vec<&RewardDirective> = bucket
                    .iter()
                    .map(|&i| &directives[i])
                    .filter(|rd| matches!(rd.s, Scope::All) || rd.s == Scope::One(s))
                    .collect();
                if applicable.is_empty() {
                    continue;
                }
                // Directives covering every (s', y, z) need no expectation;
                // the last one simply wins.
                if applicable.iter().all(|rd| {
                    matches!((rd.s2, rd.y, rd.z), (Scope::All, Scope::All, Scope::All))
                }) {
                    m.set_r(s, a, b, applicable.last().unwrap().value);
                    continue;
                }
                slice.fill(0.0);
                for rd in &applicable {
                    for s2 in rd.s2.iter(ns) {
                        for y in rd.y.iter(ny) {
                            for z in rd.z.iter(nz) {
                                slice[(s2 * ny + y) * nz + z] = rd.value;
                            }
                        }
                    }
                }
                let mut acc = 0.0;
                let mut mass = 0.0;
                for s2 in 0..ns {
                    let pt = m.t(s, a, b, s2);
                    if pt == 0.0 {
                        continue;
                    }
                    for y in 0..ny {
                        for z in 0..nz {
                            let po = m.o(s2, a, b, y, z);
                            if po == 0.0 {
                                continue;
                            }
                            acc += pt * po * slice[(s2 * ny + y) * nz + z];
                            mass += pt * po;
                        }
                    }
                }
                m.set_r(s, a, b, if mass > 0.0 { acc / mass } else { 0.0 });
            }
        }
    }
}
