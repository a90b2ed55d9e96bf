use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn programs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/programs")
}

fn modsvc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modsvc"))
        .args(args)
        .output()
        .expect("spawn modsvc")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn check_car_program() {
    let o = modsvc(&["check", path(&programs().join("car.role"))]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("4 roles, 1 abstract, 0 errors"), "{out}");
    assert!(out.contains("role RightWheel extends Wheel"));
}

#[test]
fn check_reports_cycles_and_unvalued_constants() {
    let dir = tempfile::tempdir().unwrap();
    let cyc = dir.path().join("cycle.role");
    fs::write(&cyc, "role A extends B { }\nrole B extends A { }\n").unwrap();
    let o = modsvc(&["check", path(&cyc)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("inheritance cycle"), "{}", stderr(&o));

    let unv = dir.path().join("unvalued.role");
    fs::write(&unv, "abstract role W { abstract constant turn_dir; }\nrole R extends W { }\n").unwrap();
    let o = modsvc(&["check", path(&unv)]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("turn_dir") && err.contains("line "), "{err}");
}

#[test]
fn measure_sizes() {
    let o = modsvc(&["measure", path(&programs().join("car_embedded.py"))]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("raw: 838 bytes"), "{out}");
    assert!(out.contains("gzip: 338 bytes"), "{out}");
    assert!(out.contains("bytecode 156 bytes (not reproduced"));

    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    fs::write(&empty, "").unwrap();
    assert!(stdout(&modsvc(&["measure", path(&empty)])).contains("raw: 0 bytes"));

    let same = dir.path().join("same");
    fs::write(&same, [b'a'; 1000]).unwrap();
    let out = stdout(&modsvc(&["measure", path(&same)]));
    let gz: usize = out
        .lines()
        .find_map(|l| l.strip_prefix("gzip: "))
        .and_then(|l| l.split(' ').next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(gz < 100, "{out}");

    assert_eq!(modsvc(&["measure", "/nonexistent/file"]).status.code(), Some(2));
}

#[test]
fn run_car_and_repeat() {
    let dir = tempfile::tempdir().unwrap();
    let p = programs();
    let (a, b) = (dir.path().join("a.log"), dir.path().join("b.log"));
    for out in [&a, &b] {
        let o = modsvc(&[
            "run",
            path(&p.join("car.topo")),
            path(&p.join("car.scenario")),
            "--seed",
            "1",
            "--until",
            "6000",
            "--log",
            path(out),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let log = fs::read(&a).unwrap();
    assert_eq!(log, fs::read(&b).unwrap());
    let text = String::from_utf8(log).unwrap();
    assert!(text.contains("right TURN_CONTINUOUSLY -100"));
    assert!(text.contains("left TURN_CONTINUOUSLY 100"));
}

#[test]
fn run_to_stdout() {
    let p = programs();
    let o = modsvc(&["run", path(&p.join("car.topo")), path(&p.join("car.scenario")), "--until", "10"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("0 head boot id=0 version=1\n"));
}

#[test]
fn input_errors_exit_2() {
    let p = programs();
    let topo = p.join("car.topo");
    assert_eq!(modsvc(&["run", "missing.topo", "x.scenario", "--until", "1"]).status.code(), Some(2));
    assert_eq!(modsvc(&["run", path(&topo)]).status.code(), Some(2));
    assert_eq!(modsvc(&["fly"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let scen = dir.path().join("bad.scenario");
    fs::write(&scen, "at 0 upgrade nobody 2\n").unwrap();
    let o = modsvc(&["run", path(&topo), path(&scen), "--until", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(":line 1: unknown module `nobody`"), "{}", stderr(&o));

    fs::write(&scen, "at 0 start head absent.role\n").unwrap();
    let o = modsvc(&["run", path(&topo), path(&scen), "--until", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn refused_start_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("broken.role"), "role A {").unwrap();
    let scen = dir.path().join("s.scenario");
    fs::write(&scen, "at 0 start head broken.role\n").unwrap();
    let o = modsvc(&["run", path(&programs().join("car.topo")), path(&scen), "--until", "5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("start refused: ERR 422"), "{}", stderr(&o));
}
