//! The `inversemark` binary: subcommands, outputs and exit codes.

use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};
use std::thread;

use inversemark::bridge::{
    serve_connection, BridgeHandler, FrameHeader, ServerInfo, PROTOCOL_VERSION,
};
use inversemark::imageio::{load_image, save_png};
use inversemark::{Error, ImageTensor, KeyFile, Shape, Tensor3};
use serde_json::Value;

const SMALL: [&str; 6] = ["--s-low", "32", "--resolution", "128", "--steps", "8"];

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_inversemark"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout)
        .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn cover(path: &Path, h: usize, w: usize) {
    let img = ImageTensor::new(Tensor3::from_fn(Shape::new(3, h, w), |c, y, x| {
        0.5 + 0.3 * ((x as f64 * 0.07).sin() * (y as f64 * 0.05).cos()) - 0.1 * c as f64
    }))
    .unwrap();
    save_png(&img, path).unwrap();
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(&SMALL);
    v
}

#[test]
fn keygen_embed_attack_extract() {
    let dir = tempfile::tempdir().unwrap();
    let (key, img, wm, att) = (
        dir.path().join("k.toml"),
        dir.path().join("cover.png"),
        dir.path().join("wm.png"),
        dir.path().join("att.png"),
    );
    cover(&img, 160, 128);
    // 4x32x32 latent, f_c = 2, f_hw = 16: 8 bits
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "[gshade]\nf_c = 2\nf_hw = 16\n").unwrap();
    let run = |a: &[&str]| {
        let mut v = with_small(a);
        v.extend_from_slice(&["--config", s(&cfg)]);
        cli(&v)
    };
    let payload = "10110010";
    let o = run(&[
        "keygen",
        "--seed",
        "4",
        "--payload",
        payload,
        "--out",
        s(&key),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    match KeyFile::load(&key).unwrap() {
        KeyFile::GaussianShading(k) => assert_eq!(k.payload.len(), 8),
        other => panic!("{other:?}"),
    }

    let o = run(&["embed", "--key", s(&key), "--in", s(&img), "--out", s(&wm)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(json(&o)["psnr"].as_f64().unwrap() > 20.0);
    assert_eq!(load_image(&wm).unwrap().shape(), Shape::new(3, 128, 128));

    let o = run(&["extract", "--key", s(&key), "--in", s(&wm)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o);
    assert_eq!(v["accuracy"].as_f64(), Some(1.0));
    assert_eq!(v["bits"].as_u64(), Some(8));

    let o = cli(&[
        "attack",
        "--in",
        s(&wm),
        "--op",
        "jpeg",
        "--q",
        "50",
        "--out",
        s(&att),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = dir.path().join("r.json");
    let o = run(&[
        "extract",
        "--key",
        s(&key),
        "--in",
        s(&att),
        "--out",
        s(&report),
    ]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(v["accuracy"].as_f64().unwrap() >= 0.5);

    for op in [
        &["--op", "crop", "--ratio", "0.8"][..],
        &["--op", "blur", "--r", "2"],
        &["--op", "noise", "--std", "0.05"],
        &["--op", "brightness", "--f", "2"],
        &["--op", "rotate", "--deg", "90"],
    ] {
        let mut args = vec!["attack", "--in", s(&wm), "--out", s(&att)];
        args.extend_from_slice(op);
        assert_eq!(code(&cli(&args)), 0, "{op:?}");
    }
}

#[test]
fn treering_keys_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (key, img, wm) = (
        dir.path().join("k.toml"),
        dir.path().join("c.png"),
        dir.path().join("w.png"),
    );
    cover(&img, 256, 256);
    let common = [
        "--injector",
        "treering",
        "--s-low",
        "64",
        "--resolution",
        "256",
        "--steps",
        "8",
    ];
    let run = |extra: &[&str]| {
        let mut a = extra.to_vec();
        a.extend_from_slice(&common);
        cli(&a)
    };
    assert_eq!(code(&run(&["keygen", "--out", s(&key)])), 0);
    assert_eq!(
        code(&run(&[
            "embed",
            "--key",
            s(&key),
            "--in",
            s(&img),
            "--out",
            s(&wm)
        ])),
        0
    );
    let v = json(&run(&["extract", "--key", s(&key), "--in", s(&wm)]));
    assert_eq!(v["injector"], "treering");
    assert!(v["report"]["p_value"].as_f64().unwrap() < 1e-10);
    // a tree-ring key used with --injector gshade is refused
    let o = cli(&with_small(&[
        "extract",
        "--injector",
        "gshade",
        "--key",
        s(&key),
        "--in",
        s(&wm),
    ]));
    assert_eq!(code(&o), 1);
}

#[test]
fn evaluate_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir(&data).unwrap();
    for i in 0..2 {
        cover(&data.join(format!("{i}.png")), 128, 128);
    }
    std::fs::write(data.join("junk.png"), b"junk").unwrap();
    let out = dir.path().join("report");
    let o = cli(&with_small(&[
        "evaluate",
        "--dataset",
        s(&data),
        "--out",
        s(&out),
        "--seed",
        "3",
    ]));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["records.csv", "summary.md", "config.toml"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let csv = std::fs::read_to_string(out.join("records.csv")).unwrap();
    assert!(csv.lines().next().unwrap().contains("jpeg_q50"));
    assert_eq!(csv.lines().count(), 3);
    assert!(String::from_utf8_lossy(&o.stdout).contains("| identity | 1.0000 |"));
}

#[test]
fn argument_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("c.png");
    cover(&img, 64, 64);
    let att = dir.path().join("a.png");
    assert_eq!(code(&cli(&["frobnicate"])), 1);
    assert_eq!(
        code(&cli(&[
            "attack",
            "--in",
            s(&img),
            "--op",
            "jpeg",
            "--out",
            s(&att)
        ])),
        1
    );
    assert_eq!(
        code(&cli(&[
            "attack",
            "--in",
            s(&img),
            "--op",
            "crop",
            "--ratio",
            "1.5",
            "--out",
            s(&att)
        ])),
        1
    );
    assert_eq!(
        code(&cli(&["keygen", "--codec", "bogus", "--out", s(&att)])),
        1
    );
    assert_eq!(
        code(&cli(&["keygen", "--payload", "1012", "--out", s(&att)])),
        1
    );
    // 32 bits do not fit a 4x32x32 latent with f_c = 2, f_hw = 32
    let key = dir.path().join("k.toml");
    assert_eq!(
        code(&cli(&with_small(&[
            "keygen",
            "--payload",
            &"1".repeat(32),
            "--out",
            s(&key)
        ]))),
        1
    );
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[pipeline]\nstrength = 3.0\n").unwrap();
    assert_eq!(
        code(&cli(&["keygen", "--config", s(&cfg), "--out", s(&key)])),
        1
    );
    assert_eq!(code(&cli(&["--help"])), 0);
}

#[test]
fn io_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.png");
    let out = dir.path().join("o.png");
    assert_eq!(
        code(&cli(&[
            "attack",
            "--in",
            s(&missing),
            "--op",
            "blur",
            "--r",
            "2",
            "--out",
            s(&out)
        ])),
        3
    );
    assert_eq!(
        code(&cli(&[
            "keygen",
            "--config",
            s(&dir.path().join("none.toml")),
            "--out",
            s(&out)
        ])),
        3
    );
    // nothing listens on a freshly released port
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let key = dir.path().join("k.toml");
    assert_eq!(code(&cli(&with_small(&["keygen", "--out", s(&key)]))), 0);
    let model = format!("bridge:127.0.0.1:{port}");
    let img = dir.path().join("c.png");
    cover(&img, 128, 128);
    let o = cli(&with_small(&[
        "embed",
        "--model",
        &model,
        "--key",
        s(&key),
        "--in",
        s(&img),
        "--out",
        s(&out),
    ]));
    assert_eq!(code(&o), 3);
}

/// Accepts the handshake for a 4x32x32 latent and fails every request.
struct Failing;

impl BridgeHandler for Failing {
    fn info(&self) -> ServerInfo {
        ServerInfo {
            protocol_version: PROTOCOL_VERSION,
            c_latent: 4,
            f_vae: 4,
            latent_hw: [32, 32],
            c_pixel: 3,
            alpha_bar: None,
        }
    }

    fn handle(
        &self,
        _: &FrameHeader,
        _: &[Vec<f32>],
    ) -> inversemark::Result<([usize; 3], Vec<f32>)> {
        Err(Error::NumericFailure {
            timestep: None,
            message: "model produced NaN".into(),
        })
    }
}

#[test]
fn remote_model_failure_exits_2() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let _ = serve_connection(stream, &Failing);
        }
    });
    let dir = tempfile::tempdir().unwrap();
    let (key, img, out) = (
        dir.path().join("k.toml"),
        dir.path().join("c.png"),
        dir.path().join("o.png"),
    );
    cover(&img, 128, 128);
    assert_eq!(code(&cli(&with_small(&["keygen", "--out", s(&key)]))), 0);
    let model = format!("bridge:{addr}");
    let o = cli(&with_small(&[
        "embed",
        "--model",
        &model,
        "--key",
        s(&key),
        "--in",
        s(&img),
        "--out",
        s(&out),
    ]));
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}
