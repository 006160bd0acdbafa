"""Exception taxonomy.

UserError covers bad input (parse errors, unknown names, invalid
arguments); IntegrityError covers internal state violations that signal a
maintenance or bookkeeping bug (support-count underflow, erasing a record
that should exist, functional-dependency conflicts).  The CLI maps the
two classes to exit codes 1 and 2.
"""


class EngineError(Exception):
    pass


class UserError(EngineError):
    pass


class IntegrityError(EngineError):
    pass
