use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use base64::Engine as _;
use c2vl_core::data::{class_hue, synth_generate, SynthConfig};
use c2vl_core::encoder::{FrozenEncoder, StubFrozenEncoder};
use c2vl_core::prompt::{
    encode_png, generate_prompts, generate_record, EngineClient, FramePolicy, PipelineOptions, PromptCache,
    RemoteConfig, RemoteEngine, RetryPolicy, SkeletonRenderer, StubEngine, VideoSource, BACKGROUND,
    DETECTOR_TEXT_PROMPT, VQA_QUESTION,
};
use c2vl_core::Error;
use image::{Rgb, RgbImage};

struct Seen {
    path: String,
    headers: HashMap<String, String>,
    body: serde_json::Value,
}

/// Serves `replies.len()` requests, answering each in order with (status, body).
fn mock_server(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<Seen>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, reply) in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
            let mut headers = HashMap::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    headers.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
                }
            }
            let len: usize = headers.get("content-length").and_then(|v| v.parse().ok()).unwrap_or(0);
            let mut body = vec![0u8; len];
            reader.read_exact(&mut body).unwrap();
            let body = serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null);
            tx.send(Seen { path, headers, body }).unwrap();
            let msg = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
            stream.write_all(msg.as_bytes()).unwrap();
            stream.flush().unwrap();
        }
    });
    (base, rx)
}

fn engine(base: &str, token: Option<&str>) -> RemoteEngine {
    RemoteEngine::new(RemoteConfig {
        detector_url: format!("{base}/detect"),
        vqa_url: format!("{base}/vqa"),
        token: token.map(str::to_string),
        timeout: Duration::from_secs(10),
    })
}

fn test_image() -> RgbImage {
    let mut img = RgbImage::from_pixel(16, 12, BACKGROUND);
    for x in 4..9 {
        for y in 2..10 {
            img.put_pixel(x, y, Rgb([200, 30, 30]));
        }
    }
    img
}

fn decode_b64_png(value: &serde_json::Value) -> RgbImage {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(value.as_str().unwrap())
        .unwrap();
    image::load_from_memory(&bytes).unwrap().to_rgb8()
}

#[test]
fn remote_detect_sends_person_prompt_and_png() {
    let reply = r#"{"detections":[{"box":{"x0":0.1,"y0":0.2,"x1":0.6,"y1":0.9},"score":0.8}]}"#;
    let (base, rx) = mock_server(vec![(200, reply.into())]);
    let img = test_image();
    let dets = engine(&base, Some("secret")).detect(&img, DETECTOR_TEXT_PROMPT).unwrap();
    assert_eq!(dets.len(), 1);
    assert_eq!(dets[0].score, 0.8);
    assert_eq!(dets[0].bbox.x1, 0.6);
    let seen = rx.recv().unwrap();
    assert_eq!(seen.path, "/detect");
    assert_eq!(seen.body["text_prompt"], "person");
    assert_eq!(seen.headers.get("authorization").map(String::as_str), Some("Bearer secret"));
    assert_eq!(decode_b64_png(&seen.body["image_png_b64"]), img);
}

#[test]
fn remote_vqa_sends_exact_question() {
    let (base, rx) = mock_server(vec![(200, r#"{"answer":"holding a cup, standing, drinking"}"#.into())]);
    let img = test_image();
    let answer = engine(&base, None).answer(&img, VQA_QUESTION).unwrap();
    assert_eq!(answer, "holding a cup, standing, drinking");
    let seen = rx.recv().unwrap();
    assert_eq!(seen.path, "/vqa");
    assert_eq!(
        seen.body["question"],
        "Is he/she or are they holding anything in the hand? Is he/she or are they standing or sitting? \
         What is he/she or are they trying to do? Answer the questions concisely"
    );
    assert!(!seen.headers.contains_key("authorization"));
    assert_eq!(decode_b64_png(&seen.body["image_png_b64"]), img);
}

#[test]
fn remote_status_codes_map_to_error_kinds() {
    let (base, _rx) = mock_server(vec![
        (500, "{}".into()),
        (429, "{}".into()),
        (404, "{}".into()),
        (200, "not json".into()),
    ]);
    let e = engine(&base, None);
    let img = test_image();
    let server = e.detect(&img, DETECTOR_TEXT_PROMPT).unwrap_err();
    assert!(matches!(server, Error::Transport(_)) && server.is_retryable());
    assert!(matches!(e.detect(&img, DETECTOR_TEXT_PROMPT).unwrap_err(), Error::Transport(_)));
    let missing = e.detect(&img, DETECTOR_TEXT_PROMPT).unwrap_err();
    assert!(matches!(missing, Error::Data(_)) && !missing.is_retryable());
    assert!(matches!(e.answer(&img, VQA_QUESTION).unwrap_err(), Error::Data(_)));
}

#[test]
fn remote_unreachable_host_is_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let e = engine(&format!("http://127.0.0.1:{port}"), None);
    assert!(matches!(e.answer(&test_image(), VQA_QUESTION).unwrap_err(), Error::Transport(_)));
}

#[test]
fn remote_engine_drives_full_record() {
    let (base, rx) = mock_server(vec![
        (
            200,
            r#"{"detections":[{"box":{"x0":0.25,"y0":0.25,"x1":0.75,"y1":0.75},"score":0.9},{"box":{"x0":0.0,"y0":0.0,"x1":0.1,"y1":0.1},"score":0.2}]}"#.into(),
        ),
        (200, r#"{"answer":"a person waving"}"#.into()),
    ]);
    let corpus = synth_generate(&SynthConfig::new(2, 1, 3)).unwrap();
    let seq = &corpus.sequences[0];
    let renderer = SkeletonRenderer::new(seq, &corpus.layout, class_hue(0, 2));
    let retry = RetryPolicy {
        attempts: 1,
        base_delay: Duration::ZERO,
    };
    let record = generate_record(&seq.sample_id, &renderer, &engine(&base, None), &FramePolicy::default(), retry, 5).unwrap();
    let frame = renderer.frame(record.vision.frame_index).unwrap();
    let crop = record.vision.decode().unwrap();
    assert_eq!(crop, image::imageops::crop_imm(&frame, 16, 16, 32, 32).to_image());
    assert_eq!(record.vision.detector_score, 0.9);
    assert_eq!(record.language.text, "a person waving");
    assert_eq!(record.engine_meta.timestamp, 5);
    assert_eq!(rx.recv().unwrap().path, "/detect");
    let vqa = rx.recv().unwrap();
    assert_eq!(decode_b64_png(&vqa.body["image_png_b64"]), crop);
}

#[test]
fn concurrent_cache_writes_keep_every_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("prompts.jsonl");
    let corpus = synth_generate(&SynthConfig::new(2, 1, 1)).unwrap();
    let template = corpus.prompts[0].clone();
    let n = 10_000;
    {
        let (cache, corrupt) = PromptCache::open(&path).unwrap();
        assert!(corrupt.is_empty());
        let threads = 8;
        thread::scope(|s| {
            for t in 0..threads {
                let cache = &cache;
                let template = &template;
                s.spawn(move || {
                    for i in (t..n).step_by(threads) {
                        let mut r = template.clone();
                        r.sample_id = format!("s{i:05}");
                        r.vision.sample_id = r.sample_id.clone();
                        r.language.sample_id = r.sample_id.clone();
                        r.language.text = format!("caption {i}");
                        cache.put(&r).unwrap();
                    }
                });
            }
        });
        assert_eq!(cache.len(), n);
    }
    let text = std::fs::read_to_string(&path).unwrap();
    let mut ids = HashSet::new();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let id = v["sample_id"].as_str().unwrap().to_string();
        assert_eq!(v["text"], format!("caption {}", &id[1..].parse::<usize>().unwrap()));
        ids.insert(id);
    }
    assert_eq!(text.lines().count(), n);
    assert_eq!(ids.len(), n);
    let (reopened, corrupt) = PromptCache::open(&path).unwrap();
    assert!(corrupt.is_empty());
    assert_eq!(reopened.len(), n);
    let r = reopened.get("s04321").unwrap();
    assert_eq!(r.language.text, "caption 4321");
    assert_eq!(r.vision.crop, template.vision.crop);
}

struct Blank;

impl VideoSource for Blank {
    fn frame_count(&self) -> usize {
        4
    }

    fn frame(&self, _index: usize) -> c2vl_core::Result<RgbImage> {
        Ok(RgbImage::from_pixel(32, 32, BACKGROUND))
    }
}

#[test]
fn pipeline_is_one_to_one_and_warm_cache_skips_engine() {
    let corpus = synth_generate(&SynthConfig::new(3, 4, 2)).unwrap();
    let ids: Vec<String> = corpus.sequences.iter().map(|s| s.sample_id.clone()).collect();
    let sources = |id: &str| -> c2vl_core::Result<Box<dyn VideoSource + '_>> {
        let i = ids.iter().position(|x| x == id).unwrap();
        Ok(Box::new(SkeletonRenderer::new(
            &corpus.sequences[i],
            &corpus.layout,
            class_hue(corpus.labels[i], 3),
        )))
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.jsonl");
    let opts = PipelineOptions {
        timestamp: Some(0),
        ..PipelineOptions::default()
    };
    let cold = StubEngine::new(2);
    let (cache, _) = PromptCache::open(&path).unwrap();
    let stats = generate_prompts(&ids, sources, &cold, &cache, &opts).unwrap();
    assert_eq!((stats.generated, stats.cached), (ids.len(), 0));
    assert!(stats.failed.is_empty());
    assert_eq!(cold.calls(), 2 * ids.len());
    let cached: HashSet<String> = cache.sample_ids().into_iter().collect();
    assert_eq!(cached, ids.iter().cloned().collect::<HashSet<_>>());
    for (id, expected) in ids.iter().zip(&corpus.prompts) {
        let got = cache.get(id).unwrap();
        assert_eq!(&got.sample_id, id);
        assert_eq!(got.language.text, expected.language.text);
    }
    drop(cache);

    let warm = StubEngine::new(2);
    let (cache, _) = PromptCache::open(&path).unwrap();
    let stats = generate_prompts(&ids, sources, &warm, &cache, &opts).unwrap();
    assert_eq!((stats.generated, stats.cached), (0, ids.len()));
    assert_eq!(warm.calls(), 0);
}

#[test]
fn pipeline_collects_failures_without_aborting() {
    let corpus = synth_generate(&SynthConfig::new(2, 1, 4)).unwrap();
    let mut ids: Vec<String> = corpus.sequences.iter().map(|s| s.sample_id.clone()).collect();
    ids.push("blank".into());
    let sources = |id: &str| -> c2vl_core::Result<Box<dyn VideoSource + '_>> {
        match corpus.sequences.iter().position(|s| s.sample_id == id) {
            Some(i) => Ok(Box::new(SkeletonRenderer::new(&corpus.sequences[i], &corpus.layout, 0.0))),
            None => Ok(Box::new(Blank)),
        }
    };
    let dir = tempfile::tempdir().unwrap();
    let (cache, _) = PromptCache::open(&dir.path().join("c.jsonl")).unwrap();
    let stats = generate_prompts(&ids, sources, &StubEngine::new(4), &cache, &PipelineOptions::default()).unwrap();
    assert_eq!(stats.generated, 2);
    assert_eq!(stats.failed.len(), 1);
    assert_eq!(stats.failed[0].0, "blank");
    assert!(stats.failed[0].1.contains("no person"));
    assert!(!cache.contains("blank"));
}

#[test]
fn stub_detector_crop_matches_subimage() {
    let img = test_image();
    let dets = StubEngine::new(0).detect(&img, DETECTOR_TEXT_PROMPT).unwrap();
    assert_eq!(dets.len(), 1);
    let b = dets[0].bbox;
    let (w, h) = img.dimensions();
    let x0 = (b.x0 * w as f64).floor() as u32;
    let y0 = (b.y0 * h as f64).floor() as u32;
    let x1 = (b.x1 * w as f64).ceil() as u32;
    let y1 = (b.y1 * h as f64).ceil() as u32;
    assert!(x0 <= 4 && y0 <= 2 && x1 >= 9 && y1 >= 10);
    let crop = image::imageops::crop_imm(&img, x0, y0, x1 - x0, y1 - y0).to_image();
    let fg = crop.pixels().filter(|p| **p != BACKGROUND).count();
    assert_eq!(fg, 5 * 8);
    assert!(!encode_png(&crop).unwrap().is_empty());
}

#[test]
fn distinct_stub_captions_embed_apart() {
    let corpus = synth_generate(&SynthConfig::new(4, 1, 6)).unwrap();
    let texts: Vec<String> = corpus.prompts.iter().map(|p| p.language.text.clone()).collect();
    let unique: HashSet<&String> = texts.iter().collect();
    assert_eq!(unique.len(), texts.len());
    let frozen = StubFrozenEncoder::new(64, 6).unwrap();
    let emb = frozen.encode_texts(&texts).unwrap();
    let m = emb.matrix();
    for i in 0..m.nrows() {
        assert!((m.row(i).dot(&m.row(i)) - 1.0).abs() < 1e-9);
        for j in 0..i {
            let cos = m.row(i).dot(&m.row(j));
            assert!(cos < 0.9, "captions {i} and {j}: cosine {cos}");
        }
    }
}
