use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{DetectionResult, EvalError, ParametricClass, Strategy};
use crate::conflict::ConflictType;
use crate::registry::Domain;
use crate::text::{jaccard, normalize};
use crate::verbalize::GoldPair;

pub const DEFAULT_ALIGNMENT_THRESHOLD: f64 = 0.6;

/// Quotes shorter than this only align by Jaccard, so that a fragment like
/// "the tour" is not taken as quoting a whole sentence.
const MIN_CONTAINMENT_TOKENS: usize = 4;

/// How a prediction quote aligns with a context sentence: 1.0 when one
/// contains the other after normalization, token Jaccard otherwise.
pub(crate) fn similarity(quote: &str, sentence: &str) -> f64 {
    let q = normalize(quote);
    let s = normalize(sentence);
    if q.is_empty() || s.is_empty() {
        return 0.0;
    }
    if q == s {
        return 1.0;
    }
    let (short, long) = if q.len() <= s.len() { (&q, &s) } else { (&s, &q) };
    if short.split(' ').count() >= MIN_CONTAINMENT_TOKENS && format!(" {long} ").contains(&format!(" {short} ")) {
        return 1.0;
    }
    jaccard(quote, sentence)
}

fn best(quote: &str, sentences: &[String]) -> f64 {
    sentences.iter().map(|s| similarity(quote, s)).fold(0.0, f64::max)
}

/// Which gold pairs the predicted conflicts localize. Both quotes of a
/// prediction must align with the pair's sentences; each prediction serves
/// at most one pair, assigned greedily by similarity with ties going to the
/// earlier gold pair.
pub fn match_localization(result: &DetectionResult, gold: &[GoldPair], threshold: f64) -> Vec<bool> {
    let mut candidates = Vec::new();
    for (gi, g) in gold.iter().enumerate() {
        for (pi, p) in result.conflicts.iter().enumerate() {
            let sa = best(&p.sentence_a, &g.a_texts);
            let sb = best(&p.sentence_b, &g.b_texts);
            if sa >= threshold && sb >= threshold {
                candidates.push((sa.min(sb), sa + sb, gi, pi));
            }
        }
    }
    candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then(y.1.total_cmp(&x.1)).then(x.2.cmp(&y.2)).then(x.3.cmp(&y.3)));
    let mut matched = vec![false; gold.len()];
    let mut used = vec![false; result.conflicts.len()];
    for (_, _, gi, pi) in candidates {
        if !matched[gi] && !used[pi] {
            matched[gi] = true;
            used[pi] = true;
        }
    }
    matched
}

/// How the three runs of an instance combine.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    AllRuns,
    AnyRun,
    Majority,
}

impl Aggregation {
    fn passes(self, hits: usize) -> bool {
        match self {
            Aggregation::AllRuns => hits == 3,
            Aggregation::AnyRun => hits >= 1,
            Aggregation::Majority => hits >= 2,
        }
    }
}

impl FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "all_runs" => Ok(Aggregation::AllRuns),
            "any_run" => Ok(Aggregation::AnyRun),
            "majority" => Ok(Aggregation::Majority),
            other => Err(format!("unknown aggregation {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceScore {
    pub id: u8,
    /// `None` when the instance has no sentence-level gold.
    pub loc: Option<u8>,
}

/// ID and LOC for one instance over exactly three runs. A run localizes
/// when it detects and every gold pair is matched.
pub fn score_instance(
    runs: &[DetectionResult],
    gold: Option<&[GoldPair]>,
    threshold: f64,
    agg: Aggregation,
) -> Result<InstanceScore, EvalError> {
    if runs.len() != 3 {
        return Err(EvalError::RunCount(runs.len()));
    }
    let detections = runs.iter().filter(|r| r.detected).count();
    let id = u8::from(agg.passes(detections));
    let loc = gold.filter(|g| !g.is_empty()).map(|g| {
        let localized = runs
            .iter()
            .filter(|r| r.detected && match_localization(r, g, threshold).iter().all(|&m| m))
            .count();
        u8::from(agg.passes(localized))
    });
    Ok(InstanceScore { id, loc })
}

/// Analysis keys of one scored instance.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SheetKeys {
    pub conflict_type: Option<ConflictType>,
    pub domains: Vec<Domain>,
    pub relations: Vec<String>,
    pub context_tokens: usize,
    pub length_bin: Option<usize>,
    pub parametric_split: Option<ParametricClass>,
}

impl SheetKeys {
    pub fn domain_count(&self) -> usize {
        self.domains.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSheet {
    pub instance_id: String,
    pub model: String,
    pub strategy: Strategy,
    pub id_score: u8,
    pub loc_score: Option<u8>,
    pub runs: Vec<DetectionResult>,
    pub keys: SheetKeys,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    Overall,
    ConflictType,
    Domain,
    Relation,
    DomainCount,
    LengthBin,
    ParametricSplit,
}

impl GroupKey {
    pub const ALL: [GroupKey; 7] = [
        GroupKey::Overall,
        GroupKey::ConflictType,
        GroupKey::Domain,
        GroupKey::Relation,
        GroupKey::DomainCount,
        GroupKey::LengthBin,
        GroupKey::ParametricSplit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GroupKey::Overall => "overall",
            GroupKey::ConflictType => "conflict_type",
            GroupKey::Domain => "domain",
            GroupKey::Relation => "relation",
            GroupKey::DomainCount => "domain_count",
            GroupKey::LengthBin => "length_bin",
            GroupKey::ParametricSplit => "parametric_split",
        }
    }

    /// (sort position, label) of every group the sheet belongs to.
    fn groups(self, k: &SheetKeys) -> Vec<((usize, String), String)> {
        match self {
            GroupKey::Overall => vec![((0, String::new()), "all".into())],
            GroupKey::ConflictType => k
                .conflict_type
                .map(|t| {
                    let pos = ConflictType::all().iter().position(|x| *x == t).unwrap_or(usize::MAX);
                    ((pos, String::new()), t.to_string())
                })
                .into_iter()
                .collect(),
            GroupKey::Domain => {
                let mut ds = k.domains.clone();
                ds.sort();
                ds.dedup();
                ds.into_iter()
                    .map(|d| ((Domain::ALL.iter().position(|x| *x == d).unwrap_or(usize::MAX), String::new()), d.to_string()))
                    .collect()
            }
            GroupKey::Relation => {
                let mut rs = k.relations.clone();
                rs.sort();
                rs.dedup();
                rs.into_iter().map(|r| ((0, r.clone()), r)).collect()
            }
            GroupKey::DomainCount => vec![((k.domain_count(), String::new()), k.domain_count().to_string())],
            GroupKey::LengthBin => k.length_bin.map(|b| ((b, String::new()), format!("Q{b}"))).into_iter().collect(),
            GroupKey::ParametricSplit => k
                .parametric_split
                .map(|p| ((p as usize, String::new()), p.as_str().to_string()))
                .into_iter()
                .collect(),
        }
    }
}

impl FromStr for GroupKey {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GroupKey::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| EvalError::UnknownKey(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub key: GroupKey,
    pub group: String,
    pub n: usize,
    /// Mean ID score in percent.
    pub id: f64,
    /// Mean LOC score in percent over the `loc_n` instances that have gold.
    pub loc: Option<f64>,
    pub loc_n: usize,
}

/// Mean scores per group in a fixed row order. A sheet with several
/// domains or relations counts toward each of them.
pub fn aggregate(sheets: &[ScoreSheet], key: GroupKey) -> Result<Vec<AggregateRow>, EvalError> {
    if sheets.is_empty() {
        return Err(EvalError::NoSheets);
    }
    // label, n, id sum, loc n, loc sum
    type Acc = (String, usize, u64, usize, u64);
    let mut acc: BTreeMap<(usize, String), Acc> = BTreeMap::new();
    for s in sheets {
        for (pos, label) in key.groups(&s.keys) {
            let e = acc.entry(pos).or_insert((label, 0, 0, 0, 0));
            e.1 += 1;
            e.2 += u64::from(s.id_score);
            if let Some(l) = s.loc_score {
                e.3 += 1;
                e.4 += u64::from(l);
            }
        }
    }
    Ok(acc
        .into_values()
        .map(|(group, n, id, loc_n, loc)| AggregateRow {
            key,
            group,
            n,
            id: 100.0 * id as f64 / n as f64,
            loc: (loc_n > 0).then(|| 100.0 * loc as f64 / loc_n as f64),
            loc_n,
        })
        .collect())
}

/// Quantile bins 1..=k by total context length, ties broken by instance
/// id; returned in input order. Bin sizes differ by at most one.
pub fn length_bins(items: &[(&str, usize)], k: usize) -> Result<Vec<usize>, EvalError> {
    if k < 1 {
        return Err(EvalError::BinCount);
    }
    if items.is_empty() {
        return Err(EvalError::NoInstances);
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| items[a].1.cmp(&items[b].1).then(items[a].0.cmp(items[b].0)));
    let n = items.len();
    let mut bins = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        bins[i] = rank * k / n + 1;
    }
    Ok(bins)
}

#[cfg(test)]
mod tests {
    use super::super::{ParseStatus, PredictedConflict, Strategy};
    use super::*;
    use proptest::prelude::*;

    fn gold(a: &str, b: &str) -> GoldPair {
        GoldPair { group: 0, a_sentences: vec![0], b_sentences: vec![0], a_texts: vec![a.into()], b_texts: vec![b.into()] }
    }

    fn run(pairs: &[(&str, &str)]) -> DetectionResult {
        DetectionResult {
            detected: !pairs.is_empty(),
            n_claimed: pairs.len(),
            conflicts: pairs
                .iter()
                .map(|(a, b)| PredictedConflict { reason: String::new(), sentence_a: a.to_string(), sentence_b: b.to_string() })
                .collect(),
            parse_status: ParseStatus::Clean,
            raw: String::new(),
        }
    }

    const CAPTAIN_A: &str = "The 1891 British Lions tour to South Africa, captained by Bill Maclagen, was a fifteen-a-side rugby tour that took place in Suid Africa, following the 1888 British Lions tour to New Zealand and Australia.";
    const CAPTAIN_B: &str = "The 1891 British Lions tour to South Africa, captained by William Burrows, was a Fifteen-a-side rugby tour that took place in Suid Africa, following the earlier 1888 British Lions tour to New Zealand and Australia.";

    #[test]
    fn verbatim_quotes_match() {
        let g = vec![gold(CAPTAIN_A, CAPTAIN_B)];
        assert_eq!(match_localization(&run(&[(CAPTAIN_A, CAPTAIN_B)]), &g, 0.6), vec![true]);
        // Quoting only the clause still aligns by containment.
        assert_eq!(
            match_localization(&run(&[("captained by Bill Maclagen, was a fifteen-a-side", "captained by William Burrows")]), &g, 0.6),
            vec![true]
        );
    }

    #[test]
    fn one_side_only_is_unmatched() {
        let g = vec![gold(CAPTAIN_A, CAPTAIN_B)];
        assert_eq!(match_localization(&run(&[(CAPTAIN_A, "")]), &g, 0.6), vec![false]);
        assert_eq!(match_localization(&run(&[(CAPTAIN_A, "Hastings borders Kings County.")]), &g, 0.6), vec![false]);
    }

    #[test]
    fn paraphrase_at_jaccard_point_seven() {
        let sentence = "the 1891 british lions tour was captained by william burrows";
        let quote = "1891 lions tour captained by william burrows";
        // 7 shared tokens over a 10-token union; the quote is not a
        // contiguous part of the sentence.
        assert!((jaccard(quote, sentence) - 0.7).abs() < 1e-12);
        assert!((similarity(quote, sentence) - 0.7).abs() < 1e-12);
        let g = vec![gold(sentence, sentence)];
        assert_eq!(match_localization(&run(&[(quote, quote)]), &g, 0.6), vec![true]);
        assert_eq!(match_localization(&run(&[(quote, quote)]), &g, 0.75), vec![false]);
    }

    #[test]
    fn short_fragments_do_not_contain() {
        assert!(similarity("the tour", CAPTAIN_A) < 0.6);
    }

    #[test]
    fn one_prediction_serves_one_pair() {
        let g = vec![gold("a b c d e", "f g h i j"), gold("a b c d e", "f g h i j")];
        assert_eq!(match_localization(&run(&[("a b c d e", "f g h i j")]), &g, 0.6), vec![true, false]);
    }

    fn r(detect: bool) -> DetectionResult {
        if detect {
            run(&[("a b c d e", "f g h i j")])
        } else {
            run(&[])
        }
    }

    #[test]
    fn run_rules() {
        let g = vec![gold("a b c d e", "f g h i j")];
        let s = |runs: Vec<DetectionResult>, agg| score_instance(&runs, Some(&g), 0.6, agg).unwrap();
        assert_eq!(s(vec![r(true), r(true), r(false)], Aggregation::AllRuns), InstanceScore { id: 0, loc: Some(0) });
        assert_eq!(s(vec![r(true), r(true), r(true)], Aggregation::AllRuns), InstanceScore { id: 1, loc: Some(1) });
        assert_eq!(s(vec![r(true), r(true), r(false)], Aggregation::Majority), InstanceScore { id: 1, loc: Some(1) });
        assert_eq!(s(vec![r(false), r(false), r(true)], Aggregation::AnyRun), InstanceScore { id: 1, loc: Some(1) });
        assert_eq!(score_instance(&[r(true)], Some(&g), 0.6, Aggregation::AllRuns), Err(EvalError::RunCount(1)));
        assert_eq!(score_instance(&[r(true), r(true), r(true)], None, 0.6, Aggregation::AllRuns).unwrap().loc, None);
    }

    #[test]
    fn two_conflicts_one_localized_per_run() {
        let g = vec![gold("a b c d e", "f g h i j"), gold("k l m n o", "p q r s t")];
        let runs = vec![r(true), r(true), r(true)];
        assert_eq!(score_instance(&runs, Some(&g), 0.6, Aggregation::AllRuns).unwrap(), InstanceScore { id: 1, loc: Some(0) });
    }

    fn sheet(id: &str, ids: u8, loc: Option<u8>, domains: &[Domain]) -> ScoreSheet {
        ScoreSheet {
            instance_id: id.into(),
            model: "m".into(),
            strategy: Strategy::MultiStep,
            id_score: ids,
            loc_score: loc,
            runs: vec![],
            keys: SheetKeys { domains: domains.to_vec(), ..SheetKeys::default() },
        }
    }

    #[test]
    fn domain_means_by_hand() {
        let sheets = vec![
            sheet("1", 1, Some(1), &[Domain::Human]),
            sheet("2", 0, Some(0), &[Domain::Human, Domain::Geography]),
            sheet("3", 1, Some(0), &[Domain::Geography]),
            sheet("4", 1, None, &[Domain::Geography]),
        ];
        let rows = aggregate(&sheets, GroupKey::Domain).unwrap();
        let names: Vec<&str> = rows.iter().map(|r| r.group.as_str()).collect();
        assert_eq!(names, vec!["Human", "Geography"]);
        // Human: ids {1,0} -> 50%, locs {1,0} -> 50%.
        assert_eq!((rows[0].n, rows[0].id, rows[0].loc), (2, 50.0, Some(50.0)));
        // Geography: ids {0,1,1} -> 66.67%, locs {0,0} -> 0%.
        assert_eq!(rows[1].n, 3);
        assert!((rows[1].id - 200.0 / 3.0).abs() < 1e-9);
        assert_eq!((rows[1].loc, rows[1].loc_n), (Some(0.0), 2));
        let counts = aggregate(&sheets, GroupKey::DomainCount).unwrap();
        assert_eq!(counts.iter().map(|r| (r.group.as_str(), r.n)).collect::<Vec<_>>(), vec![("1", 3), ("2", 1)]);
        assert!(aggregate(&[], GroupKey::Domain).is_err());
        assert_eq!("bogus".parse::<GroupKey>(), Err(EvalError::UnknownKey("bogus".into())));
    }

    #[test]
    fn all_zero_sheets() {
        let sheets: Vec<ScoreSheet> = (0..5).map(|i| sheet(&i.to_string(), 0, Some(0), &[Domain::General])).collect();
        for row in aggregate(&sheets, GroupKey::Overall).unwrap() {
            assert_eq!((row.id, row.loc), (0.0, Some(0.0)));
        }
    }

    #[test]
    fn bins() {
        let ids: Vec<String> = (0..100).map(|i| format!("i{i:03}")).collect();
        let items: Vec<(&str, usize)> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), 100 - i)).collect();
        let b = length_bins(&items, 4).unwrap();
        for (i, (_, len)) in items.iter().enumerate() {
            assert_eq!(b[i] == 1, *len <= 25);
        }
        let eight: Vec<(&str, usize)> = ids[..8].iter().enumerate().map(|(i, id)| (id.as_str(), i * 3)).collect();
        let b = length_bins(&eight, 4).unwrap();
        assert_eq!(b, vec![1, 1, 2, 2, 3, 3, 4, 4]);
        let tied: Vec<(&str, usize)> = ids[..6].iter().rev().map(|id| (id.as_str(), 9)).collect();
        assert_eq!(length_bins(&tied, 3).unwrap(), vec![3, 3, 2, 2, 1, 1]);
        assert_eq!(length_bins(&tied, 0), Err(EvalError::BinCount));
        assert_eq!(length_bins(&[], 4), Err(EvalError::NoInstances));
    }

    /// Largest number of gold pairs any one-to-one assignment can match.
    fn brute_force(ok: &[Vec<bool>]) -> usize {
        fn go(ok: &[Vec<bool>], g: usize, used: &mut Vec<bool>) -> usize {
            if g == ok.len() {
                return 0;
            }
            let mut best = go(ok, g + 1, used);
            for p in 0..used.len() {
                if ok[g][p] && !used[p] {
                    used[p] = true;
                    best = best.max(1 + go(ok, g + 1, used));
                    used[p] = false;
                }
            }
            best
        }
        let preds = ok.first().map_or(0, Vec::len);
        go(ok, 0, &mut vec![false; preds])
    }

    const WORDS: &[&str] = &["alpha", "beta", "gamma", "delta", "eps", "zeta"];

    fn phrase(bits: u8) -> String {
        WORDS.iter().enumerate().filter(|(i, _)| bits & (1 << i) != 0).map(|(_, w)| *w).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn greedy_against_exhaustive_search() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut divergent = 0;
        for _ in 0..1000 {
            let ng = rng.random_range(1..=3);
            let np = rng.random_range(0..=3);
            let golds: Vec<GoldPair> =
                (0..ng).map(|_| gold(&phrase(rng.random_range(1..64)), &phrase(rng.random_range(1..64)))).collect();
            let preds: Vec<(String, String)> =
                (0..np).map(|_| (phrase(rng.random_range(1..64)), phrase(rng.random_range(1..64)))).collect();
            let refs: Vec<(&str, &str)> = preds.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
            let det = run(&refs);
            let ok: Vec<Vec<bool>> = golds
                .iter()
                .map(|g| {
                    det.conflicts
                        .iter()
                        .map(|p| best(&p.sentence_a, &g.a_texts) >= 0.6 && best(&p.sentence_b, &g.b_texts) >= 0.6)
                        .collect()
                })
                .collect();
            let greedy = match_localization(&det, &golds, 0.6).iter().filter(|&&m| m).count();
            let optimum = brute_force(&ok);
            assert!(greedy <= optimum);
            // A greedy matching is maximal, so it reaches at least half.
            assert!(2 * greedy >= optimum);
            if greedy != optimum {
                divergent += 1;
            }
        }
        eprintln!("greedy matcher below the optimum on {divergent} of 1000 fixtures");
    }

    proptest! {
        #[test]
        fn scoring_monotonicity(detect in proptest::array::uniform3(any::<bool>()), hit in proptest::array::uniform3(any::<bool>())) {
            let g = vec![gold("a b c d e", "f g h i j"), gold("k l m n o", "p q r s t")];
            let mk = |d: bool, both: bool| {
                if !d { return run(&[]); }
                if both { run(&[("a b c d e", "f g h i j"), ("k l m n o", "p q r s t")]) } else { run(&[("a b c d e", "f g h i j")]) }
            };
            let runs: Vec<DetectionResult> = (0..3).map(|i| mk(detect[i], hit[i])).collect();
            for agg in [Aggregation::AllRuns, Aggregation::AnyRun, Aggregation::Majority] {
                let base = score_instance(&runs, Some(&g), 0.6, agg).unwrap();
                if agg == Aggregation::AllRuns {
                    prop_assert!(base.loc.unwrap() <= base.id);
                }
                for i in 0..3 {
                    // More localized pairs never lower LOC.
                    let mut more = runs.clone();
                    more[i] = mk(detect[i], true);
                    prop_assert!(score_instance(&more, Some(&g), 0.6, agg).unwrap().loc >= base.loc);
                    // Losing a detection never raises ID.
                    let mut fewer = runs.clone();
                    fewer[i] = run(&[]);
                    prop_assert!(score_instance(&fewer, Some(&g), 0.6, agg).unwrap().id <= base.id);
                }
            }
        }
    }
}
