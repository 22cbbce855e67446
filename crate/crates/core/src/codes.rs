//! Machine-readable reasons for rejecting an operation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::StructureError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    PermissionDeniedCellEdit,
    PermissionDeniedCellRead,
    PermissionDeniedAcl,
    VariableProtected,
    StaleVersion,
    ParseError,
    UnknownId,
    UnknownSession,
    SequenceGap,
    DecodeError,
    DuplicateUser,
    SessionFull,
    NoMainTab,
    NestingForbidden,
    InvalidRange,
    InvalidKind,
    InvalidName,
    LastTab,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::PermissionDeniedCellEdit => "PERMISSION_DENIED_CELL_EDIT",
            ErrorCode::PermissionDeniedCellRead => "PERMISSION_DENIED_CELL_READ",
            ErrorCode::PermissionDeniedAcl => "PERMISSION_DENIED_ACL",
            ErrorCode::VariableProtected => "VARIABLE_PROTECTED",
            ErrorCode::StaleVersion => "STALE_VERSION",
            ErrorCode::ParseError => "PARSE_ERROR",
            ErrorCode::UnknownId => "UNKNOWN_ID",
            ErrorCode::UnknownSession => "UNKNOWN_SESSION",
            ErrorCode::SequenceGap => "SEQUENCE_GAP",
            ErrorCode::DecodeError => "DECODE_ERROR",
            ErrorCode::DuplicateUser => "DUPLICATE_USER",
            ErrorCode::SessionFull => "SESSION_FULL",
            ErrorCode::NoMainTab => "NO_MAIN_TAB",
            ErrorCode::NestingForbidden => "NESTING_FORBIDDEN",
            ErrorCode::InvalidRange => "INVALID_RANGE",
            ErrorCode::InvalidKind => "INVALID_KIND",
            ErrorCode::InvalidName => "INVALID_NAME",
            ErrorCode::LastTab => "LAST_TAB",
        }
    }

    pub fn parse(code: &str) -> Option<ErrorCode> {
        serde_json::from_value(serde_json::Value::String(code.to_string())).ok()
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<StructureError> for ErrorCode {
    fn from(e: StructureError) -> Self {
        match e {
            StructureError::UnknownId => ErrorCode::UnknownId,
            StructureError::StaleVersion => ErrorCode::StaleVersion,
            StructureError::NoMainTab => ErrorCode::NoMainTab,
            StructureError::NestingForbidden => ErrorCode::NestingForbidden,
            StructureError::InvalidRange => ErrorCode::InvalidRange,
            StructureError::InvalidKind => ErrorCode::InvalidKind,
            StructureError::InvalidName => ErrorCode::InvalidName,
            StructureError::LastTab => ErrorCode::LastTab,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serde_name_matches_as_str() {
        let all = [
            ErrorCode::PermissionDeniedCellEdit,
            ErrorCode::PermissionDeniedCellRead,
            ErrorCode::PermissionDeniedAcl,
            ErrorCode::VariableProtected,
            ErrorCode::StaleVersion,
            ErrorCode::ParseError,
            ErrorCode::UnknownId,
            ErrorCode::UnknownSession,
            ErrorCode::SequenceGap,
            ErrorCode::DecodeError,
            ErrorCode::DuplicateUser,
            ErrorCode::SessionFull,
            ErrorCode::NoMainTab,
            ErrorCode::NestingForbidden,
            ErrorCode::InvalidRange,
            ErrorCode::InvalidKind,
            ErrorCode::InvalidName,
            ErrorCode::LastTab,
        ];
        for code in all {
            assert_eq!(serde_json::to_value(code).unwrap(), code.as_str());
            assert_eq!(ErrorCode::parse(code.as_str()), Some(code));
        }
    }

    #[test]
    fn structure_errors_keep_their_names() {
        for e in [StructureError::StaleVersion, StructureError::LastTab] {
            assert_eq!(ErrorCode::from(e).as_str(), e.code());
        }
    }
}
