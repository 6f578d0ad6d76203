//! Reference protocol server on stdin/stdout.
//!
//! `alref-ref-server [MODE]` where MODE is `baseline` (default) or `uniform`.
//! Test modes answer `hello` correctly and then misbehave on the next
//! request: `bad-json`, `wrong-id`, `bad-simplex`, `bad-shape`, `silent`.

use std::io::{self, BufRead, Write};
use std::process::ExitCode;

use alref::protocol::{handle, serve, write_line, BaselineBackend, Backend, Request, Response, Tensor, UniformBackend};

fn faulty(mode: &str) -> io::Result<()> {
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    let mut backend = UniformBackend::default();
    for line in stdin.lock().lines() {
        let req: Request = match serde_json::from_str(&line?) {
            Ok(r) => r,
            Err(_) => continue,
        };
        if matches!(req, Request::Hello { .. } | Request::Shutdown { .. }) {
            let stop = matches!(req, Request::Shutdown { .. });
            write_line(&mut out, &handle(&mut backend, req)).map_err(io::Error::other)?;
            if stop {
                return Ok(());
            }
            continue;
        }
        let id = req.id();
        let resp = handle(&mut backend, req);
        match mode {
            "bad-json" => writeln!(out, "{{\"op\": \"ok\", \"id\": {id}")?,
            "wrong-id" => {
                let resp = match resp {
                    Response::Ok { version, proba, .. } => Response::Ok { id: id + 7, version, proba },
                    e => e,
                };
                write_line(&mut out, &resp).map_err(io::Error::other)?
            }
            "bad-simplex" | "bad-shape" => {
                let resp = match resp {
                    Response::Ok { proba: Some(t), version, .. } => {
                        let mut v = t.to_f32().map_err(io::Error::other)?;
                        let mut shape = t.shape.clone();
                        if mode == "bad-simplex" {
                            v.iter_mut().for_each(|x| *x *= 2.0);
                        } else {
                            shape[1] += 1;
                            v.extend(vec![0.25; shape[0] * shape[2]]);
                        }
                        Response::Ok {
                            id,
                            version,
                            proba: Some(Tensor::from_f32(shape, &v).map_err(io::Error::other)?),
                        }
                    }
                    other => other,
                };
                write_line(&mut out, &resp).map_err(io::Error::other)?
            }
            "silent" => {}
            _ => unreachable!(),
        }
        out.flush()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "baseline".into());
    let mut backend: Box<dyn Backend> = match mode.as_str() {
        "baseline" => Box::new(BaselineBackend::default()),
        "uniform" => Box::new(UniformBackend::default()),
        "bad-json" | "wrong-id" | "bad-simplex" | "bad-shape" | "silent" => {
            return match faulty(&mode) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("alref-ref-server: {e}");
                    ExitCode::from(2)
                }
            };
        }
        other => {
            eprintln!("alref-ref-server: unknown mode `{other}`");
            return ExitCode::from(1);
        }
    };
    let stdin = io::stdin();
    match serve(stdin.lock(), io::stdout().lock(), backend.as_mut()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("alref-ref-server: {e}");
            ExitCode::from(2)
        }
    }
}
