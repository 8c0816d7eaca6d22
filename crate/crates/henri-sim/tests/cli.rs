use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_henri-sim"))
}

fn workspace_scenario() -> &'static Path {
    Path::new(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../scenarios/antivirus.json"
    ))
}

#[test]
fn run_then_replay_round_trips_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let transcript = dir.path().join("antivirus.transcript");

    let run = bin()
        .args(["run"])
        .arg(workspace_scenario())
        .arg("--transcript")
        .arg(&transcript)
        .output()
        .unwrap();
    // the showcase scenario has disjoint bounds, so the run aborts
    assert_eq!(run.status.code(), Some(2), "{run:?}");
    assert!(transcript.is_file());

    let replay = bin().arg("replay").arg(&transcript).output().unwrap();
    assert_eq!(replay.status.code(), Some(0), "{replay:?}");
    let stderr = String::from_utf8_lossy(&replay.stderr);
    assert!(stderr.contains("clean"), "{stderr}");
}

#[test]
fn missing_scenario_file_is_a_plain_error() {
    let out = bin().args(["run", "/nonexistent.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1), "{out:?}");
}

#[test]
fn corrupted_transcript_reports_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let transcript = dir.path().join("antivirus.transcript");
    bin()
        .args(["run"])
        .arg(workspace_scenario())
        .arg("--transcript")
        .arg(&transcript)
        .output()
        .unwrap();

    // double one OFFER line: the replayed round numbers stop advancing
    let text = std::fs::read_to_string(&transcript).unwrap();
    let offer = text
        .lines()
        .find(|l| l.contains("\"OFFER\""))
        .expect("transcript has offers");
    let corrupted = text.replace(offer, &format!("{offer}\n{offer}"));
    std::fs::write(&transcript, corrupted).unwrap();

    let replay = bin().arg("replay").arg(&transcript).output().unwrap();
    assert_eq!(replay.status.code(), Some(2), "{replay:?}");
    let stderr = String::from_utf8_lossy(&replay.stderr);
    assert!(stderr.contains("divergence"), "{stderr}");
}
