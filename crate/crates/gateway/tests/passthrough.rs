//! The gateway adds no rules of its own: each response is whatever the
//! exam service returns for the same command, serialized.

use proptest::prelude::*;
use serde_json::{json, Value};

use momex_core::exam::{Command, NullDirectory, QuestionDraft, University};
use momex_core::testbed::TestbedConfig;
use momex_gateway::error::status_for;
use momex_gateway::gateway::outcome_json;
use momex_gateway::{Gateway, GatewayConfig, HttpRequest};

const UNIVERSITY: &str = include_str!("../../../fixtures/university.toml");

#[derive(Debug, Clone)]
enum Req {
    AddQuestion {
        course: &'static str,
        correct: usize,
        points: u32,
    },
    EditQuestion {
        n: u32,
        correct: usize,
    },
    CreateCourse {
        id: &'static str,
        owner: &'static str,
    },
    Group {
        id: &'static str,
        member: &'static str,
    },
    Compose {
        count: usize,
    },
    Schedule {
        start: u64,
        end: u64,
    },
    Comment {
        session: &'static str,
    },
}

fn req() -> impl Strategy<Value = Req> {
    let course = prop::sample::select(vec!["net101", "bio200"]);
    let user = prop::sample::select(vec!["prof", "alice", "admin", "ghost"]);
    prop_oneof![
        (course.clone(), 0usize..5, 0u32..3).prop_map(|(course, correct, points)| {
            Req::AddQuestion {
                course,
                correct,
                points,
            }
        }),
        (1u32..25, 0usize..5).prop_map(|(n, correct)| Req::EditQuestion { n, correct }),
        (
            prop::sample::select(vec!["net101", "net202", "bad id"]),
            user.clone()
        )
            .prop_map(|(id, owner)| Req::CreateCourse { id, owner }),
        (prop::sample::select(vec!["net101-a", "g2"]), user)
            .prop_map(|(id, member)| Req::Group { id, member }),
        (0usize..25).prop_map(|count| Req::Compose { count }),
        (0u64..5000, 0u64..5000).prop_map(|(start, end)| Req::Schedule { start, end }),
        prop::sample::select(vec!["sess1", "nope"]).prop_map(|session| Req::Comment { session }),
    ]
}

/// The HTTP request and the service command it should become.
fn lower(r: &Req, actor: &str) -> (HttpRequest, Command, u16) {
    let a = || momex_core::exam::UserId::from(actor);
    let http = |m: &str, p: &str, body: Value| HttpRequest::new(m, p, None, body);
    match r.clone() {
        Req::AddQuestion {
            course,
            correct,
            points,
        } => {
            let draft = QuestionDraft {
                course: course.into(),
                text: "t".into(),
                choices: vec!["a".into(), "b".into(), "c".into()],
                correct_choice: correct,
                topic: "sip".into(),
                points,
            };
            let body = serde_json::to_value(&draft).unwrap();
            (
                http("POST", "/api/questions", body),
                Command::AddQuestion { actor: a(), draft },
                201,
            )
        }
        Req::EditQuestion { n, correct } => {
            let draft = QuestionDraft {
                course: "net101".into(),
                text: "edited".into(),
                choices: vec!["a".into(), "b".into()],
                correct_choice: correct,
                topic: "sip".into(),
                points: 1,
            };
            let id = format!("q{n}");
            let body = serde_json::to_value(&draft).unwrap();
            let cmd = Command::EditQuestion {
                actor: a(),
                id: id.as_str().into(),
                draft,
            };
            (http("PUT", &format!("/api/questions/{id}"), body), cmd, 200)
        }
        Req::CreateCourse { id, owner } => {
            let body = json!({"id": id, "title": "T", "owners": [owner]});
            let cmd = Command::CreateCourse {
                actor: a(),
                id: id.into(),
                title: "T".into(),
                owners: [owner.into()].into(),
            };
            (http("POST", "/api/courses", body), cmd, 201)
        }
        Req::Group { id, member } => {
            let cmd = Command::ManageGroup {
                actor: a(),
                id: id.into(),
                members: [member.into()].into(),
            };
            (
                http(
                    "PUT",
                    &format!("/api/groups/{id}"),
                    json!({"members": [member]}),
                ),
                cmd,
                200,
            )
        }
        Req::Compose { count } => {
            let body = json!({"course": "net101", "title": "R", "kind": "random", "count": count, "topic_filter": null, "duration_ms": 1000});
            let draft = serde_json::from_value(body.clone()).unwrap();
            (
                http("POST", "/api/exams", body),
                Command::ComposeExam { actor: a(), draft },
                201,
            )
        }
        Req::Schedule { start, end } => {
            let body = json!({"exam": "exam1", "group": "net101-a", "window": {"start": start, "end": end}, "reminder_offset_ms": 0});
            let draft = serde_json::from_value(body.clone()).unwrap();
            (
                http("POST", "/api/schedules", body),
                Command::ScheduleExam { actor: a(), draft },
                201,
            )
        }
        Req::Comment { session } => {
            let body = json!({"field": "comments", "value": "ok"});
            let cmd = Command::EditReport {
                actor: a(),
                session: session.into(),
                field: serde_json::from_value(body.clone()).unwrap(),
            };
            (
                http("PATCH", &format!("/api/reports/{session}"), body),
                cmd,
                200,
            )
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn responses_mirror_the_service(steps in prop::collection::vec((req(), 0usize..3), 1..12)) {
        let config = GatewayConfig::sim(TestbedConfig::default(), Some(University::parse(UNIVERSITY).unwrap()));
        let mut gw = Gateway::new(config).unwrap();
        let users = ["admin", "prof", "alice"];
        let tokens: Vec<String> = users.iter().map(|u| gw.login(u, &format!("{u}-pw")).unwrap().token).collect();
        for (r, who) in steps {
            let (mut http, cmd, created) = lower(&r, users[who]);
            http.token = Some(tokens[who].clone());
            let mut model = gw.testbed().service().clone();
            let expected = model.execute(gw.now(), cmd, &mut NullDirectory);
            let got = gw.handle(&http);
            match expected {
                Ok(o) => {
                    prop_assert_eq!(got.status, created);
                    prop_assert_eq!(got.body, outcome_json(&o));
                }
                Err(e) => {
                    prop_assert_eq!(got.status, status_for(&e));
                    prop_assert_eq!(&got.body["error"]["code"], e.code());
                    prop_assert_eq!(&got.body["error"]["message"], &e.to_string());
                }
            }
        }
    }
}
