from .accounting import AccountingReport, account, account_tree, params_table
from .wer import WerBreakdown, edit_distance, word_error_rate
