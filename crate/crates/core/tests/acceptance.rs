//! One PASS/FAIL line per acceptance criterion.
//!
//! Run with `cargo test -p meol-core --test acceptance -- --nocapture` to see
//! the report. Criteria run sequentially inside one test so their timings
//! are not skewed by other tests sharing the machine.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::oracle::{arb_instance, build, check_histogram, run_random};
use common::trend::{oracle_recall_at_10, records, FROZEN_RECALL_AT_10};
use common::{check_golden, corpus, safety};
use meol_core::backend::{
    decode_request, decode_response, encode_request, encode_response, Backend, EmbedRequest,
    EmbedResponse, MockHashBackend, MockSemanticBackend, Pooling,
};
use meol_core::bench::{run_eval, DatabaseFormat, RunConfig, RunOptions};
use meol_core::prompt::{
    make_length_variant, render_prompt, LengthVariant, ModalInput, Modality, PromptTemplate,
    TemplateRegistry,
};
use meol_core::retrieval::{
    evaluate, read_index, write_index, EvalRun, RetrievalIndex, DEFAULT_K_VALUES,
};
use meol_core::svg::{
    parse_svg, rasterize_default, simplify_rules, visual_distance, RasterImage, SvgError,
    VISUAL_TOLERANCE,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

type Check = Result<(), String>;
type Criterion = (&'static str, fn() -> Check);

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn within(limit: Duration, start: Instant) -> Check {
    let took = start.elapsed();
    if took > limit {
        return Err(format!("took {took:?}, limit {limit:?}"));
    }
    Ok(())
}

fn metrics_oracle() -> Check {
    let start = Instant::now();
    run_random(1000)?;
    within(Duration::from_secs(30), start)
}

fn relations(run: &EvalRun) -> Check {
    let recalls: Vec<f64> = run
        .k_values
        .iter()
        .map(|k| run.recall(*k).unwrap())
        .collect();
    if recalls.windows(2).any(|w| w[0] > w[1]) {
        return Err(format!("recall not monotone: {recalls:?}"));
    }
    if let Some(r1) = run.recall(1) {
        if run.mrr < r1 {
            return Err(format!("mrr {} < recall@1 {r1}", run.mrr));
        }
    }
    Ok(())
}

fn metric_relations() -> Check {
    runner(300)
        .run(&arb_instance(), |inst| {
            let (index, queries, _) = build(&inst);
            let run = evaluate(&index, &queries, &DEFAULT_K_VALUES).unwrap();
            relations(&run).map_err(TestCaseError::fail)
        })
        .map_err(|e| e.to_string())?;
    let recs = records();
    for format in DatabaseFormat::ALL {
        let config = RunConfig {
            database_format: format,
            ..RunConfig::default()
        };
        let report = run_eval(
            &config,
            &recs,
            &MockSemanticBackend::new(),
            &RunOptions::default(),
        )
        .map_err(|e| e.to_string())?;
        relations(&report.run).map_err(|e| format!("{format}: {e}"))?;
    }
    Ok(())
}

fn rewrite_safety() -> Check {
    let start = Instant::now();
    let files = corpus();
    if files.len() < 20 {
        return Err(format!("corpus has {} files", files.len()));
    }
    let s = safety::run(&files);
    if !s.violations.is_empty() {
        return Err(s.violations.join("; "));
    }
    if s.rewritten == 0 || s.visual_rejections == 0 || s.parse_rejections == 0 {
        return Err(format!("scripted cases did not cover every outcome: {s:?}"));
    }
    within(Duration::from_secs(60), start)
}

fn simplify_properties() -> Check {
    for (name, src) in corpus() {
        let doc = parse_svg(&src).map_err(|e| format!("{name}: {e}"))?;
        let once = simplify_rules(&doc);
        if simplify_rules(&once) != once {
            return Err(format!("{name}: not idempotent"));
        }
        if once.element_count > doc.element_count {
            return Err(format!("{name}: element count grew"));
        }
        match rasterize_default(&doc) {
            Ok(before) => {
                let after = rasterize_default(&once).map_err(|e| format!("{name}: {e}"))?;
                let rmse = visual_distance(&before, &after).map_err(|e| e.to_string())?;
                if rmse > VISUAL_TOLERANCE {
                    return Err(format!("{name}: rmse {rmse}"));
                }
            }
            Err(SvgError::RenderUnsupported { .. }) => {}
            Err(e) => return Err(format!("{name}: {e}")),
        }
    }
    Ok(())
}

fn prompt_goldens() -> Check {
    let reg = TemplateRegistry::builtin();
    let img = RasterImage::blank(2, 2);
    let svg = r#"<svg viewBox="0 0 4 4"><circle id="sun" cx="2" cy="2" r="1"/></svg>"#;
    let input = |m: Modality| match m {
        Modality::Text => ModalInput::Text("a red bird".into()),
        Modality::Image => ModalInput::Image(img.clone()),
        Modality::Svg => ModalInput::Svg(svg.into()),
        Modality::ImageSvg => ModalInput::ImageSvg(img.clone(), svg.into()),
    };
    let text = |t: &PromptTemplate| {
        render_prompt(t, &input(t.modality))
            .map(|p| p.text_segment)
            .map_err(|e| e.to_string())
    };
    for t in reg.iter() {
        check_golden(
            &format!("prompts/{}.txt", t.template_id),
            text(t)?.as_bytes(),
        )?;
    }
    let baseline = render_prompt(
        reg.get("prompteol-text").map_err(|e| e.to_string())?,
        &ModalInput::Text("[text]".into()),
    )
    .map_err(|e| e.to_string())?;
    check_golden("prompteol_baseline.txt", baseline.text_segment.as_bytes())?;
    let base = reg.get("meol-text").map_err(|e| e.to_string())?;
    for v in LengthVariant::ALL {
        let t = make_length_variant(base, v).map_err(|e| e.to_string())?;
        check_golden(&format!("prompts/length/{v}.txt"), text(&t)?.as_bytes())?;
    }
    Ok(())
}

fn protocol_conformance() -> Check {
    let req_strategy = (
        any::<String>(),
        proptest::option::of(any::<String>()),
        0u32..64,
        "[a-z0-9]{1,16}",
    )
        .prop_map(|(text, svg_code, layer_offset, request_id)| EmbedRequest {
            text,
            image_b64: None,
            svg_code,
            layer_offset,
            pooling: Pooling::MeanAllTokens,
            request_id,
        });
    runner(256)
        .run(&req_strategy, |req| {
            prop_assert_eq!(decode_request(&encode_request(&req)).unwrap(), req);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let resp_strategy =
        prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 0..64)
            .prop_map(|vector| EmbedResponse {
                dim: vector.len(),
                vector,
                model_id: "m".into(),
                layer_count: 33,
                token_count: 7,
                request_id: "r".into(),
            });
    runner(256)
        .run(&resp_strategy, |resp| {
            let back = decode_response(&encode_response(&resp)).unwrap();
            prop_assert!(back
                .vector
                .iter()
                .zip(&resp.vector)
                .all(|(a, b)| a.to_bits() == b.to_bits()));
            prop_assert_eq!(back, resp);
            Ok(())
        })
        .map_err(|e| e.to_string())?;

    let backends: [(&str, Box<dyn Backend>); 2] = [
        ("mock-hash", Box::new(MockHashBackend::new())),
        ("mock-semantic", Box::new(MockSemanticBackend::new())),
    ];
    let req = EmbedRequest {
        text: "a red bird".into(),
        image_b64: None,
        svg_code: Some("<svg/>".into()),
        layer_offset: 1,
        pooling: Pooling::LastToken,
        request_id: "fixed".into(),
    };
    for (name, b) in &backends {
        let first = b.embed(&req).map_err(|e| e.to_string())?;
        for _ in 0..1000 {
            if b.embed(&req).map_err(|e| e.to_string())? != first {
                return Err(format!("{name} is not deterministic"));
            }
        }
    }

    let items = (0..64).map(|i| {
        let t = format!("item {i}");
        (t.clone(), MockSemanticBackend::vector_for_text(&t))
    });
    let index = RetrievalIndex::from_vectors(items).map_err(|e| e.to_string())?;
    let mut first = Vec::new();
    write_index(&index, &mut first).map_err(|e| e.to_string())?;
    let back = read_index(first.as_slice()).map_err(|e| e.to_string())?;
    let mut second = Vec::new();
    write_index(&back, &mut second).map_err(|e| e.to_string())?;
    if first != second {
        return Err("index file does not round-trip bit-exactly".into());
    }
    Ok(())
}

fn trend_fixture() -> Check {
    let recs = records();
    for (format, frozen) in FROZEN_RECALL_AT_10 {
        let oracle = oracle_recall_at_10(&recs, format);
        if (oracle - frozen).abs() > 1e-9 {
            return Err(format!("{format}: oracle {oracle} vs frozen {frozen}"));
        }
        let config = RunConfig {
            database_format: format,
            ..RunConfig::default()
        };
        let run = run_eval(
            &config,
            &recs,
            &MockSemanticBackend::new(),
            &RunOptions::default(),
        )
        .map_err(|e| e.to_string())?
        .run;
        let got = run.recall(10).unwrap();
        if (got - frozen).abs() > 1e-9 {
            return Err(format!("{format}: recall@10 {got} vs frozen {frozen}"));
        }
    }
    let get = |f| FROZEN_RECALL_AT_10.iter().find(|(g, _)| *g == f).unwrap().1;
    let (generated, raw) = (
        get(DatabaseFormat::ImagePlusGeneratedSvg),
        get(DatabaseFormat::ImagePlusRawSvg),
    );
    if generated < raw {
        return Err(format!("generated {generated} < raw {raw}"));
    }
    Ok(())
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 8] = [
        ("metrics oracle (1000 instances, < 30 s)", metrics_oracle),
        ("metric relations", metric_relations),
        ("rewrite safety (>= 20 files, < 60 s)", rewrite_safety),
        ("simplify properties", simplify_properties),
        ("prompt golden files", prompt_goldens),
        ("protocol conformance", protocol_conformance),
        ("self-similarity histogram", check_histogram),
        ("trend fixture (generated >= raw Recall@10)", trend_fixture),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let start = Instant::now();
        let result =
            catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(()) => println!("PASS  {name}  [{secs:.1}s]"),
            Err(e) => {
                println!("FAIL  {name}  [{secs:.1}s]: {e}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
