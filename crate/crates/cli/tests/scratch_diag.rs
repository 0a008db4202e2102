// temporary diagnostic, deleted before commit
use sheettoken::formats;
use sheettoken::pipeline::{load_corpus, CorpusDir};
use sheettoken_core::encoder::embed_text;
use sheettoken_core::matrix::cosine_guarded;

#[test]
#[ignore]
fn cosine_separation() {
    let corpus = load_corpus(&CorpusDir::new("/tmp/run/corpus")).unwrap();
    let cache = formats::read_token_cache(std::path::Path::new("/tmp/run/tokens.stkn")).unwrap();
    let enc = formats::load_encoder_params(std::path::Path::new("/tmp/run/encoder.bin")).unwrap();

    let (train_q, eval_q) = corpus.query_split();
    for (name, queries) in [("train", &train_q), ("eval", &eval_q)] {
        let mut auc_sum = 0.0;
        let mut margin_sum = 0.0;
        for q in queries.iter() {
            let zq = embed_text(&q.query, &enc);
            let cos_of = |id: u32| {
                let t = cache.get_f64(id).unwrap();
                cosine_guarded(&zq, &t)
            };
            let pos: Vec<f64> = q.positives.iter().map(|&id| cos_of(id)).collect();
            let neg: Vec<f64> = q.negatives.iter().map(|&id| cos_of(id)).collect();
            let mut wins = 0usize;
            for &p in &pos {
                for &n in &neg {
                    if p > n {
                        wins += 1;
                    }
                }
            }
            auc_sum += wins as f64 / (pos.len() * neg.len()) as f64;
            margin_sum += pos.iter().sum::<f64>() / pos.len() as f64
                - neg.iter().sum::<f64>() / neg.len() as f64;
        }
        println!(
            "{name}: mean AUC {:.4}, mean margin {:.4} over {} queries",
            auc_sum / queries.len() as f64,
            margin_sum / queries.len() as f64,
            queries.len()
        );
    }
}

#[test]
#[ignore]
fn logistic_on_cosine() {
    let corpus = load_corpus(&CorpusDir::new("/tmp/run/corpus")).unwrap();
    let cache = formats::read_token_cache(std::path::Path::new("/tmp/run/tokens.stkn")).unwrap();
    let enc = formats::load_encoder_params(std::path::Path::new("/tmp/run/encoder.bin")).unwrap();
    let (train_q, eval_q) = corpus.query_split();

    // features per candidate: raw cos, per-workspace-centered cos
    let featurize = |qs: &[sheettoken_core::record::QueryInstance]| {
        let mut rows: Vec<([f64; 2], bool)> = Vec::new();
        for q in qs {
            let zq = embed_text(&q.query, &enc);
            let ids = q.candidates();
            let cos: Vec<f64> = ids
                .iter()
                .map(|&id| cosine_guarded(&zq, &cache.get_f64(id).unwrap()))
                .collect();
            let mean = cos.iter().sum::<f64>() / cos.len() as f64;
            for (i, &id) in ids.iter().enumerate() {
                rows.push(([cos[i], cos[i] - mean], q.positives.contains(&id)));
            }
        }
        rows
    };
    let train = featurize(&train_q);
    let eval = featurize(&eval_q);

    for (name, fidx) in [("raw cos", 0usize), ("centered cos", 1usize)] {
        // 1-feature logistic regression, gradient descent
        let (mut w, mut b) = (0.0f64, 0.0f64);
        for _ in 0..4000 {
            let (mut gw, mut gb) = (0.0, 0.0);
            for (f, y) in &train {
                let p = 1.0 / (1.0 + (-(w * f[fidx] + b)).exp());
                let d = p - f64::from(*y);
                gw += d * f[fidx];
                gb += d;
            }
            w -= 2.0 * gw / train.len() as f64;
            b -= 2.0 * gb / train.len() as f64;
        }
        let acc = |rows: &[([f64; 2], bool)]| {
            rows.iter()
                .filter(|(f, y)| (w * f[fidx] + b >= 0.0) == *y)
                .count() as f64
                / rows.len() as f64
        };
        println!(
            "{name}: w {w:.3} b {b:.3} train acc {:.4} eval acc {:.4}",
            acc(&train),
            acc(&eval)
        );
    }
}

#[test]
#[ignore]
fn auc_per_family() {
    let corpus = load_corpus(&CorpusDir::new("/tmp/run/corpus")).unwrap();
    let cache = formats::read_token_cache(std::path::Path::new("/tmp/run/tokens.stkn")).unwrap();
    let enc = formats::load_encoder_params(std::path::Path::new("/tmp/run/encoder.bin")).unwrap();
    use std::collections::BTreeMap;
    let mut stats: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for q in &corpus.queries {
        let family = q
            .query
            .strip_prefix("retrieve all sheets for ")
            .unwrap_or(&q.query)
            .split(' ')
            .take(2)
            .collect::<Vec<_>>()
            .join(" ");
        let family = if q.query.contains(" and ") {
            format!("{family} +pair")
        } else {
            family
        };
        let zq = embed_text(&q.query, &enc);
        let cos_of = |id: u32| cosine_guarded(&zq, &cache.get_f64(id).unwrap());
        let pos: Vec<f64> = q.positives.iter().map(|&id| cos_of(id)).collect();
        let neg: Vec<f64> = q.negatives.iter().map(|&id| cos_of(id)).collect();
        let wins: usize = pos
            .iter()
            .map(|&p| neg.iter().filter(|&&n| p > n).count())
            .sum();
        let auc = wins as f64 / (pos.len() * neg.len()) as f64;
        let e = stats.entry(family).or_insert((0.0, 0));
        e.0 += auc;
        e.1 += 1;
    }
    for (family, (sum, n)) in stats {
        println!("{family:<24} auc {:.4} over {n}", sum / n as f64);
    }
}

#[test]
#[ignore]
fn auc_untrained() {
    let corpus = load_corpus(&CorpusDir::new("/tmp/run/corpus")).unwrap();
    let cfg = sheettoken_core::encoder::EncoderConfig { seed: 42, ..Default::default() };
    let enc = sheettoken_core::encoder::EncoderParams::init(&cfg);
    let cache = sheettoken_core::encoder::encode_catalog(&corpus.catalog, &enc);
    use std::collections::BTreeMap;
    let mut stats: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for q in &corpus.queries {
        let rest = q.query.strip_prefix("retrieve all sheets for ").unwrap();
        let family: &str = if rest.contains(" and ") {
            "pair"
        } else {
            rest.rsplitn(2, ' ').last().unwrap()
        };
        let zq = embed_text(&q.query, &enc);
        let cos_of = |id: u32| cosine_guarded(&zq, &cache.get_f64(id).unwrap());
        let pos: Vec<f64> = q.positives.iter().map(|&id| cos_of(id)).collect();
        let neg: Vec<f64> = q.negatives.iter().map(|&id| cos_of(id)).collect();
        let wins: usize = pos.iter().map(|&p| neg.iter().filter(|&&n| p > n).count()).sum();
        let e = stats.entry(family).or_insert((0.0, 0));
        e.0 += wins as f64 / (pos.len() * neg.len()) as f64;
        e.1 += 1;
    }
    for (family, (sum, n)) in stats {
        println!("UNTRAINED {family:<18} auc {:.4} over {n}", sum / n as f64);
    }
}

#[test]
#[ignore]
fn propagation_oversmoothing() {
    let corpus = load_corpus(&CorpusDir::new("/tmp/run/corpus")).unwrap();
    let cache = formats::read_token_cache(std::path::Path::new("/tmp/run/tokens.stkn")).unwrap();
    let enc = formats::load_encoder_params(std::path::Path::new("/tmp/run/encoder.bin")).unwrap();
    use sheettoken_core::retriever::*;
    use sheettoken_core::matrix::l2_norm;
    let params = RetrieverParams::init(RetrieverMode::Enhanced, enc.dim, 42);
    let (_, eval_q) = corpus.query_split();
    let (mut auc0, mut auc_l, mut norm_l, mut pairsim) = (0.0, 0.0, 0.0, 0.0);
    for q in &eval_q {
        let pq = PreparedQuery::from_query(q, &corpus.catalog, &cache, &enc).unwrap();
        let a = compose_adjacency(&pq.channels, &params);
        let h = propagate(&a, &pq.workspace, &params);
        let zq = &pq.workspace.query_vec;
        let auc_of = |mat: &sheettoken_core::matrix::Matrix| {
            let cos: Vec<f64> = (0..mat.rows())
                .map(|i| cosine_guarded(zq, mat.row(i)))
                .collect();
            let labels = pq.workspace.labels.as_ref().unwrap();
            let mut wins = 0;
            let mut total = 0;
            for i in 0..cos.len() {
                for j in 0..cos.len() {
                    if labels[i] && !labels[j] {
                        total += 1;
                        if cos[i] > cos[j] {
                            wins += 1;
                        }
                    }
                }
            }
            wins as f64 / total.max(1) as f64
        };
        auc0 += auc_of(&pq.workspace.node_init);
        auc_l += auc_of(&h);
        norm_l += (0..h.rows()).map(|i| l2_norm(h.row(i))).sum::<f64>() / h.rows() as f64;
        // mean pairwise cosine of final states (1.0 = fully collapsed)
        let m = h.rows();
        let mut s = 0.0;
        let mut c = 0;
        for i in 0..m {
            for j in 0..i {
                s += cosine_guarded(h.row(i), h.row(j));
                c += 1;
            }
        }
        pairsim += s / c.max(1) as f64;
    }
    let n = eval_q.len() as f64;
    println!(
        "token AUC {:.4} -> propagated AUC {:.4}; mean |h| {:.4}; mean pairwise cos(h_i,h_j) {:.4}",
        auc0 / n, auc_l / n, norm_l / n, pairsim / n
    );
}

#[test]
#[ignore]
fn channel_density() {
    let corpus = load_corpus(&CorpusDir::new("/tmp/run/corpus")).unwrap();
    let cache = formats::read_token_cache(std::path::Path::new("/tmp/run/tokens.stkn")).unwrap();
    let enc = formats::load_encoder_params(std::path::Path::new("/tmp/run/encoder.bin")).unwrap();
    use sheettoken_core::retriever::*;
    let (_, eval_q) = corpus.query_split();
    let mut sums = [0.0f64; 4];
    let mut n = 0usize;
    for q in &eval_q {
        let pq = PreparedQuery::from_query(q, &corpus.catalog, &cache, &enc).unwrap();
        let m = pq.workspace.size();
        for (k, ch) in pq.channels.channels.iter().enumerate() {
            let mut s = 0.0;
            for i in 0..m {
                for j in 0..m {
                    if i != j {
                        s += ch.get(i, j);
                    }
                }
            }
            sums[k] += s / (m * (m - 1)) as f64;
        }
        n += 1;
    }
    for (k, name) in ["semantic", "query", "schema", "shape"].iter().enumerate() {
        println!("channel {name:<9} mean off-diag {:.4}", sums[k] / n as f64);
    }
}

#[test]
#[ignore]
fn dump_trained_logits() {
    let p = formats::load_retriever_params(std::path::Path::new("/tmp/run/retriever.bin")).unwrap();
    for t in 0..p.stage_logits.rows() {
        let pi = sheettoken_core::matrix::softmax(p.stage_logits.row(t), 1.0);
        println!(
            "stage {t}: logits {:?} -> pi [sem {:.3}, qry {:.3}, sch {:.3}, shp {:.3}]",
            p.stage_logits.row(t).iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>(),
            pi[0], pi[1], pi[2], pi[3]
        );
    }
}

#[test]
#[ignore]
fn trained_family_accuracy() {
    let corpus = load_corpus(&CorpusDir::new("/tmp/run/corpus")).unwrap();
    let cache = formats::read_token_cache(std::path::Path::new("/tmp/run/tokens.stkn")).unwrap();
    let enc = formats::load_encoder_params(std::path::Path::new("/tmp/run/encoder.bin")).unwrap();
    let params = formats::load_retriever_params(std::path::Path::new("/tmp/run/r.bin")).unwrap();
    use sheettoken_core::retriever::*;
    use std::collections::BTreeMap;
    let (train_q, eval_q) = corpus.query_split();
    for (name, queries) in [("train", &train_q), ("eval", &eval_q)] {
        let mut fam: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for q in queries.iter() {
            let rest = q.query.strip_prefix("retrieve all sheets for ").unwrap();
            let family = if rest.contains(" and ") {
                "pair".to_string()
            } else {
                rest.rsplitn(2, ' ').last().unwrap().to_string()
            };
            let pq = PreparedQuery::from_query(q, &corpus.catalog, &cache, &enc).unwrap();
            let scores = forward_scores(&params, &pq);
            let labels = pq.workspace.labels.as_ref().unwrap();
            let e = fam.entry(family).or_insert((0, 0));
            for (s, &l) in scores.iter().zip(labels) {
                e.1 += 1;
                if (*s >= 0.5) == l {
                    e.0 += 1;
                }
            }
        }
        for (family, (ok, total)) in fam {
            println!("{name} {family:<14} acc {:.4} ({total} candidates)", ok as f64 / total as f64);
        }
    }
}
