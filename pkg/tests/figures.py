"""Model and command sources of the worked courses example and the car/value example."""

COURSES = """\
open util/ordering[Grade]
sig Person {
  teaches : set Course,
  enrolled : set Course,
  projects : set Project }
sig Professor, Student in Person {}
sig Course {
  projects : set Project,
  grades : Person -> Grade }
sig Project {}
sig Grade {}

fact Enrollment { // Only students can be enrolled in courses
}
"""

POSITIVE = """\
// Only enrolled person is a Student
run Positive {
  some disj P1 : Person, disj C1 : Course,
       disj G1,G2 : Grade {
    Person = P1
    Professor = none
    Student = P1
    Course = C1
    Project = none
    Grade = G1 + G2
    teaches = none->none
    enrolled = P1->C1
    Person <: projects = none->none
    Course <: projects = none->none
    grades = none->none->none
    Grade <: next = G1->G2 }
} for 1 Person, 1 Course,
      0 Project, 2 Grade expect 1
"""

NEGATIVE = """\
// A professor (not a student) is enrolled in multiple courses
run Negative {
  some disj P1,S1 : Person, disj C1,C2 : Course,
       disj G1,G2 : Grade {
    Person = P1 + S1
    Professor = P1
    Student = S1
    Course = C1 + C2
    Project = none
    Grade = G1 + G2
    teaches = none->none
    enrolled = P1->C1 + P1->C2 + S1->C1
    Person <: projects = none->none
    Course <: projects = none->none
    grades = C1->S1->G1
    Grade <: next = G1->G2 }
} for 2 Person, 2 Course,
      0 Project, 2 Grade expect 0
"""

ORACLE = "all p : Person | some p.enrolled implies p in Student"
WRONG_1 = "all p : Person | p in Student implies some p.enrolled"
WRONG_2 = "all p : Professor | no p.enrolled"

CARS = """\
open util/ordering[Value]
sig Person {
    likes : set Car,
    owns : Car -> lone Value
}
sig Adult in Person {}
abstract sig Car {}
sig Sedan, SUV extends Car {}
sig Value {}
"""

INSTANCE1 = """\
run Instance1 {
    some disj Person1,Person2,Person3 : Person |
    some disj Car1, Car2 : Car |
    some disj Value1,Value2,Value3 : Value {
        Person = Person1 + Person2 + Person3
        Adult = none
        Car = Car1 + Car2
        Sedan = Car1
        SUV = Car2
        Value = Value1 + Value2 + Value3
        likes = none->none
        owns = Person1->Car1->Value1 + Person2->Car2->Value2 +
               Person3->Car2->Value2
        Value <: next = Value1->Value2 + Value2->Value3
    }
} for 3 Person, 2 Car, 3 Value expect 1
"""


def courses_with(oracle_body: str) -> str:
    """The courses model with the Enrollment fact filled in."""
    return COURSES.replace("courses\n}", "courses\n  " + oracle_body + "\n}")
