//! Application payloads carried inside sealed records.

use std::collections::BTreeMap;

use crate::store::Document;
use crate::wire::{Decoder, Encoder, WireError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataRequest {
    Read { collection: String },
    Write { collection: String, doc: Document },
    View { collection: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataResponse {
    Documents(Vec<Document>),
    Written,
    Denied(String),
}

fn encode_doc(d: &Document) -> Vec<u8> {
    let kv = d.fields.iter().flat_map(|(k, v)| [k.as_bytes(), v.as_bytes()]);
    Encoder::new().str(&d.doc_id).str(&d.global_id).list(kv).finish()
}

fn decode_doc(bytes: &[u8]) -> Result<Document, WireError> {
    let mut d = Decoder::new(bytes);
    let doc_id = d.string()?;
    let global_id = d.string()?;
    let items = d.list()?;
    d.finish()?;
    if items.len() % 2 != 0 {
        return Err(WireError::InvalidValue("odd field list".into()));
    }
    let text = |b: &[u8]| std::str::from_utf8(b).map(str::to_owned).map_err(|_| WireError::InvalidUtf8);
    let mut fields = BTreeMap::new();
    for pair in items.chunks(2) {
        fields.insert(text(pair[0])?, text(pair[1])?);
    }
    Ok(Document {
        doc_id,
        global_id,
        fields,
    })
}

impl DataRequest {
    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            DataRequest::Read { collection } => Encoder::new().str("read").str(collection).finish(),
            DataRequest::View { collection } => Encoder::new().str("view").str(collection).finish(),
            DataRequest::Write { collection, doc } => Encoder::new()
                .str("write")
                .str(collection)
                .bytes(&encode_doc(doc))
                .finish(),
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Decoder::new(bytes);
        let op = d.string()?;
        let collection = d.string()?;
        let req = match op.as_str() {
            "read" => DataRequest::Read { collection },
            "view" => DataRequest::View { collection },
            "write" => DataRequest::Write {
                collection,
                doc: decode_doc(d.bytes()?)?,
            },
            other => return Err(WireError::InvalidValue(format!("unknown operation `{other}`"))),
        };
        d.finish()?;
        Ok(req)
    }
}

impl DataResponse {
    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            DataResponse::Documents(docs) => Encoder::new()
                .str("docs")
                .list(docs.iter().map(encode_doc))
                .finish(),
            DataResponse::Written => Encoder::new().str("written").finish(),
            DataResponse::Denied(reason) => Encoder::new().str("denied").str(reason).finish(),
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let mut d = Decoder::new(bytes);
        let kind = d.string()?;
        let resp = match kind.as_str() {
            "docs" => DataResponse::Documents(
                d.list()?.into_iter().map(decode_doc).collect::<Result<_, _>>()?,
            ),
            "written" => DataResponse::Written,
            "denied" => DataResponse::Denied(d.string()?),
            other => return Err(WireError::InvalidValue(format!("unknown response `{other}`"))),
        };
        d.finish()?;
        Ok(resp)
    }
}
