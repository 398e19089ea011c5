use std::io::{Read, Write};

use chrono::{DateTime, SecondsFormat, Utc};

use super::{Answer, CaptureError, Origin, QuestionId};

const HEADER: [&str; 5] = ["question_id", "value", "timestamp", "respondent", "origin"];

fn table_err(line: u64, message: impl Into<String>) -> CaptureError {
    CaptureError::Table {
        line,
        message: message.into(),
    }
}

/// Reads a comma-separated answer table with a header row.
pub fn read_answers_csv<R: Read>(reader: R) -> Result<Vec<Answer>, CaptureError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| table_err(1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(table_err(1, format!("expected header {}", HEADER.join(","))));
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            table_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let value: f64 = record[1]
            .parse()
            .map_err(|_| table_err(line, format!("bad value `{}`", &record[1])))?;
        if !(0.0..=1.0).contains(&value) {
            return Err(table_err(line, format!("value {value} is outside [0, 1]")));
        }
        let timestamp = DateTime::parse_from_rfc3339(&record[2])
            .map_err(|_| table_err(line, format!("bad timestamp `{}`", &record[2])))?
            .with_timezone(&Utc);
        let origin = Origin::parse(&record[4])
            .ok_or_else(|| table_err(line, format!("bad origin `{}`", &record[4])))?;
        out.push(Answer {
            question: QuestionId::new(&record[0]),
            value,
            timestamp,
            respondent: record[3].to_owned(),
            origin,
        });
    }
    Ok(out)
}

pub fn write_answers_csv<W: Write>(writer: W, answers: &[Answer]) -> Result<(), CaptureError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| table_err(0, e.to_string());
    wtr.write_record(HEADER).map_err(io)?;
    for a in answers {
        wtr.write_record([
            a.question.as_str(),
            &crate::model_io::format_prob(a.value),
            &a.timestamp.to_rfc3339_opts(SecondsFormat::Secs, true),
            &a.respondent,
            a.origin.as_str(),
        ])
        .map_err(io)?;
    }
    wtr.flush().map_err(|e| table_err(0, e.to_string()))
}
