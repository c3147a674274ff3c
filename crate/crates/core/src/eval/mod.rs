//! Oriented boxes, rotated IoU, NMS, proposal assignment and AP over 40
//! recall positions.

mod ap;
mod assign;
mod boxes;
mod dump;
mod iou;
mod nms;

pub use ap::{average_precision_40, ApResult, EvalDetection, EvalGroundTruth, OverlapMetric, RECALL_POSITIONS};
pub use assign::{assign_proposals, Assignment, ClsLabel, CLS_NEG_BELOW, CLS_POS_ABOVE, REG_ABOVE};
pub use boxes::{normalize_yaw, Box3D, DetectionResult, Difficulty, ObjectClass};
pub use dump::{format_detections, parse_detections};
pub use iou::{iou_3d, iou_bev, polygon_area, rect_intersection_area};
pub use nms::nms;
