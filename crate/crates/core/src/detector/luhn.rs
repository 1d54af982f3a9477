use super::DetectorError;

/// Checks the Luhn mod-10 condition on a 12 to 19 digit number.
///
/// Spaces and hyphens are ignored. Any other non-digit character, or a digit
/// count outside 12..=19, is an invalid-input error.
pub fn validate_luhn(input: &str) -> Result<bool, DetectorError> {
    let mut digits = Vec::with_capacity(input.len());
    for c in input.chars() {
        match c {
            ' ' | '-' => continue,
            '0'..='9' => digits.push(c as u32 - '0' as u32),
            _ => return Err(DetectorError::InvalidLuhnInput(format!("unexpected character {c:?}"))),
        }
    }
    if !(12..=19).contains(&digits.len()) {
        return Err(DetectorError::InvalidLuhnInput(format!(
            "expected 12 to 19 digits, found {}",
            digits.len()
        )));
    }
    let sum: u32 = digits
        .iter()
        .rev()
        .enumerate()
        .map(|(i, &d)| {
            if i % 2 == 1 {
                let doubled = d * 2;
                if doubled > 9 {
                    doubled - 9
                } else {
                    doubled
                }
            } else {
                d
            }
        })
        .sum();
    Ok(sum.is_multiple_of(10))
}
