use super::AnalysisError;

/// Expected sequence-number gap at a consumer `K - 1` hops away when each
/// hop fails only if all `rep_cnt` repetitions are lost with probability
/// `per` each: the mean `1/Q` of a geometric variable with success
/// probability `Q = (1 - per^rep_cnt)^(K-1)`.
pub fn expected_gap_model(per: f64, rep_cnt: u32, k: usize) -> Result<f64, AnalysisError> {
    if !(0.0..1.0).contains(&per) {
        return Err(AnalysisError::InvalidInput(format!("PER {per} outside [0, 1)")));
    }
    if rep_cnt == 0 {
        return Err(AnalysisError::InvalidInput("repCnt 0".into()));
    }
    if k < 2 {
        return Err(AnalysisError::InvalidInput(format!("K = {k}")));
    }
    let hop = 1.0 - per.powi(rep_cnt as i32);
    Ok(1.0 / hop.powi(k as i32 - 1))
}
