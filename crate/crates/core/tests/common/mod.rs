#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

pub mod oracle;
pub mod trend;

pub fn tests_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests")
}

/// Corpus files as (file name, source text), sorted by name.
pub fn corpus() -> Vec<(String, String)> {
    let mut files: Vec<_> = fs::read_dir(tests_dir().join("corpus"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "svg"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read_to_string(&p).unwrap(),
            )
        })
        .collect()
}

pub fn golden(name: &str) -> PathBuf {
    tests_dir().join("golden").join(name)
}

pub fn fixture(name: &str) -> PathBuf {
    tests_dir().join("fixtures").join(name)
}

/// Compares `actual` with a golden file; `BLESS=1` rewrites the file instead.
pub fn check_golden(name: &str, actual: &[u8]) -> Result<(), String> {
    let path = golden(name);
    if std::env::var_os("BLESS").is_some() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, actual).unwrap();
        return Ok(());
    }
    let expected = fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if expected == actual {
        Ok(())
    } else {
        Err(format!(
            "{} differs:\n--- expected\n{}\n--- actual\n{}",
            path.display(),
            String::from_utf8_lossy(&expected),
            String::from_utf8_lossy(actual)
        ))
    }
}

pub mod scripted {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    use meol_core::backend::{
        Backend, BackendError, EmbedRequest, EmbedResponse, GenerateRequest, GenerateResponse,
        MockHashBackend,
    };

    /// Replays canned generation replies in order, repeating the last one.
    /// Embeddings come from the hash mock.
    pub struct ScriptedBackend {
        replies: Vec<Result<String, BackendError>>,
        calls: AtomicUsize,
        pub prompts: Mutex<Vec<GenerateRequest>>,
    }

    impl ScriptedBackend {
        pub fn new(replies: Vec<Result<String, BackendError>>) -> Self {
            assert!(!replies.is_empty());
            Self {
                replies,
                calls: AtomicUsize::new(0),
                prompts: Mutex::new(Vec::new()),
            }
        }

        pub fn always(text: impl Into<String>) -> Self {
            Self::new(vec![Ok(text.into())])
        }

        pub fn calls(&self) -> usize {
            self.calls.load(Ordering::SeqCst)
        }
    }

    impl Backend for ScriptedBackend {
        fn model_id(&self) -> String {
            "scripted".into()
        }

        fn embed(&self, req: &EmbedRequest) -> Result<EmbedResponse, BackendError> {
            MockHashBackend::new().embed(req)
        }

        fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, BackendError> {
            self.prompts.lock().unwrap().push(req.clone());
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            let reply = &self.replies[n.min(self.replies.len() - 1)];
            reply.clone().map(|text| GenerateResponse {
                text,
                model_id: self.model_id(),
                request_id: req.request_id.clone(),
            })
        }
    }
}

pub mod safety {
    use meol_core::backend::{heuristic_plan, BackendError};
    use meol_core::rewrite::{rewrite_document, RewriteOptions, RewriteStatus};
    use meol_core::svg::{parse_svg, rasterize_default, visual_distance, SvgDocument};

    use super::scripted::ScriptedBackend;

    #[derive(Debug, Default)]
    pub struct Summary {
        pub cases: usize,
        pub rewritten: usize,
        pub fallbacks: usize,
        pub visual_rejections: usize,
        pub parse_rejections: usize,
        pub violations: Vec<String>,
    }

    /// Scripted generation replies for one document, tagged by kind.
    pub fn scripted_cases(
        doc: &SvgDocument,
        src: &str,
    ) -> Vec<(&'static str, Vec<Result<String, BackendError>>)> {
        let ok = |s: String| vec![Ok(s)];
        let mut cases = vec![
            ("valid", ok(heuristic_plan(src))),
            ("prose", ok("The icon shows a circle.".into())),
            ("truncated", ok("{\"objects\": [{\"selector\": \"0\"".into())),
            ("no-keys", ok("{\"labels\": []}".into())),
            ("bad-selector", ok(r#"{"objects": [{"selector": "9/9/9", "new_id": "ghost"}]}"#.into())),
            ("bad-action", ok(r#"{"simplify": [{"action": "T9", "selector": "0"}]}"#.into())),
            ("empty-id", ok(r#"{"objects": [{"selector": "0", "new_id": "???"}]}"#.into())),
            (
                "double-label",
                ok(r#"{"objects": [{"selector": "0", "new_id": "a"}, {"selector": "0", "new_id": "b"}]}"#.into()),
            ),
            (
                "unavailable",
                vec![Err(BackendError::Unavailable("down".into()))],
            ),
            (
                "retry-then-valid",
                vec![Ok("not json".into()), Ok(heuristic_plan(src))],
            ),
        ];
        // relabel every element that has an id; breaks CSS id selectors
        let renames: Vec<String> = doc
            .descendants()
            .iter()
            .filter(|n| !n.node_path.is_root())
            .filter_map(|n| n.id())
            .enumerate()
            .map(|(i, id)| format!(r#"{{"selector": "{id}", "new_id": "renamed item {i}"}}"#))
            .collect();
        cases.push((
            "rename-all",
            ok(format!(r#"{{"objects": [{}]}}"#, renames.join(","))),
        ));
        // an id held by an element outside the plan
        let ids: Vec<&str> = doc.ids();
        if ids.len() >= 2 {
            cases.push((
                "collision",
                ok(format!(
                    r#"{{"objects": [{{"selector": "{}", "new_id": "{}"}}]}}"#,
                    ids[0], ids[1]
                )),
            ));
        }
        cases
    }

    pub fn run(corpus: &[(String, String)]) -> Summary {
        let mut s = Summary::default();
        let opts = RewriteOptions::default();
        for (name, src) in corpus {
            let doc = parse_svg(src).unwrap();
            let before = rasterize_default(&doc).ok();
            for (kind, replies) in scripted_cases(&doc, src) {
                s.cases += 1;
                let backend = ScriptedBackend::new(replies);
                let out = rewrite_document(&doc, &backend, &opts);
                let tag = format!("{name} [{kind}]");
                match out.status {
                    RewriteStatus::Rewritten => {
                        s.rewritten += 1;
                        let text = out.output_text();
                        let reparsed = match parse_svg(&text) {
                            Ok(d) => d,
                            Err(e) => {
                                s.violations
                                    .push(format!("{tag}: output does not parse: {e}"));
                                continue;
                            }
                        };
                        if let Err(e) = reparsed.check_unique_ids() {
                            s.violations.push(format!("{tag}: {e}"));
                        }
                        let rmse = before.as_ref().and_then(|b| {
                            visual_distance(b, &rasterize_default(&reparsed).ok()?).ok()
                        });
                        match rmse {
                            Some(r) if r <= 2.0 && out.visual_rmse <= 2.0 => {}
                            other => s
                                .violations
                                .push(format!("{tag}: rmse {other:?} / {}", out.visual_rmse)),
                        }
                    }
                    RewriteStatus::FallbackOriginal => {
                        s.fallbacks += 1;
                        let reason = out.failure_reason.clone().unwrap_or_default();
                        if reason.starts_with("VisualCheckFailed") {
                            s.visual_rejections += 1;
                        }
                        if reason.starts_with("PlanParseError") {
                            s.parse_rejections += 1;
                        }
                        if out.output_text().as_bytes() != src.as_bytes() {
                            s.violations
                                .push(format!("{tag}: fallback is not byte-identical"));
                        }
                    }
                }
            }
        }
        s
    }
}
